"""Immediate-or-cancel matching of a single limit order against a book
snapshot. The replayed book is never mutated by agent fills."""

from __future__ import annotations

from dataclasses import dataclass

from .marketdata import LobSnapshot


@dataclass(frozen=True)
class LimitOrder:
    target_price: float
    signed_qty: int

    def __post_init__(self):
        if self.signed_qty != 0 and not self.target_price > 0:
            raise ValueError("target_price must be positive for a non-empty order")


@dataclass(frozen=True)
class Fill:
    filled_qty: int
    vwap: float
    levels_consumed: int

    @property
    def notional(self) -> float:
        return abs(self.filled_qty) * self.vwap


EMPTY_FILL = Fill(0, 0.0, 0)


def _walk(levels, qty: int, eligible) -> tuple[int, list, int]:
    remaining, parts, used = qty, [], 0
    for price, avail in levels:
        if remaining == 0 or not eligible(price):
            break
        take = min(remaining, int(avail))
        if take <= 0:
            continue
        parts.append((take, price))
        remaining -= take
        used += 1
    return qty - remaining, parts, used


def _vwap(parts) -> float:
    # offsets from the first price keep a single-level fill exactly at its price
    anchor = parts[0][1]
    total = sum(q for q, _ in parts)
    return anchor + sum(q * (p - anchor) for q, p in parts) / total


def execute(order: LimitOrder, lob: LobSnapshot) -> Fill:
    """Match ``order`` against the opposite side of ``lob``.

    Buys lift asks priced at or below the limit, best first; sells hit bids
    at or above it. Fractional book quantities are truncated to whole
    contracts. Whatever cannot be filled is cancelled.
    """
    qty = order.signed_qty
    if qty == 0:
        return EMPTY_FILL
    if qty > 0:
        levels = zip(lob.ask_prices, lob.ask_qtys)
        filled, parts, used = _walk(levels, qty, lambda p: p <= order.target_price)
    else:
        levels = zip(lob.bid_prices, lob.bid_qtys)
        filled, parts, used = _walk(levels, -qty, lambda p: p >= order.target_price)
    if filled == 0:
        return EMPTY_FILL
    return Fill(filled if qty > 0 else -filled, _vwap(parts), used)


def close_at_market(position: int, lob: LobSnapshot) -> Fill:
    """Flatten ``position`` against the book.

    Every opposite level is eligible. Whatever exceeds the displayed depth
    fills at the deepest level that showed liquidity (the deepest quoted
    price if the whole side is empty), so the result is always flat.
    """
    if position == 0:
        return EMPTY_FILL
    if position > 0:
        prices, qtys = lob.bid_prices, lob.bid_qtys
    else:
        prices, qtys = lob.ask_prices, lob.ask_qtys
    need = abs(position)
    filled, parts, used = _walk(zip(prices, qtys), need, lambda p: True)
    if filled < need:
        live = [p for p, q in zip(prices, qtys) if int(q) > 0]
        backstop = live[-1] if live else prices[-1]
        parts.append((need - filled, backstop))
        used = max(used, 1)
    return Fill(-position, _vwap(parts), used)

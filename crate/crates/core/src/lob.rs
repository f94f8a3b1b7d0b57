//! Price-time priority limit order book of unit-size orders.
//!
//! Prices are integer tick indices; the log-price of tick `k` is `k * tick`.
//! New orders are placed at a relative distance `x` from the best quote on
//! their own side, and an order whose price reaches the opposite best quote
//! executes one unit against the oldest order resting there.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type OrderId = u64;

/// Tick indices are clamped to this magnitude so extreme relative prices
/// from heavy-tailed draws cannot overflow.
const MAX_TICK: i64 = 1 << 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn from_sign(sign: i8) -> Side {
        if sign < 0 {
            Side::Sell
        } else {
            Side::Buy
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Order {
    pub id: OrderId,
    pub side: Side,
    pub tick: i64,
    pub entry_time: u64,
    /// Position in the book's flat list of resting ids.
    slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradeEvent {
    pub time: u64,
    pub price_tick: i64,
    pub aggressor_side: Side,
    /// The resting order that was filled.
    pub resting_id: OrderId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaceOutcome {
    Rested(OrderId),
    Executed(TradeEvent),
}

/// Exact lifetime counters of a book.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BookCounters {
    pub placed: u64,
    /// Orders consumed by trades, counting both the aggressor and the filled
    /// resting order.
    pub executed: u64,
    pub cancelled: u64,
    pub trades: u64,
}

#[derive(Debug, Clone)]
pub struct OrderBook {
    tick: f64,
    bids: BTreeMap<i64, VecDeque<OrderId>>,
    asks: BTreeMap<i64, VecDeque<OrderId>>,
    orders: HashMap<OrderId, Order>,
    resting: Vec<OrderId>,
    next_id: OrderId,
    counters: BookCounters,
}

impl PartialEq for OrderBook {
    fn eq(&self, other: &Self) -> bool {
        self.tick == other.tick && self.bids == other.bids && self.asks == other.asks
    }
}

impl OrderBook {
    pub fn new(tick: f64) -> Result<Self> {
        if !(tick > 0.0 && tick.is_finite()) {
            return Err(Error::param(format!("tick must be positive, got {tick}")));
        }
        Ok(OrderBook {
            tick,
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            orders: HashMap::new(),
            resting: Vec::new(),
            next_id: 0,
            counters: BookCounters::default(),
        })
    }

    /// A book holding one bid and one ask at log-prices `-half_spread` and
    /// `+half_spread`.
    pub fn bootstrap(tick: f64, half_spread: f64) -> Result<Self> {
        let mut book = OrderBook::new(tick)?;
        let k = (half_spread / tick).round() as i64;
        if k < 1 {
            return Err(Error::param("bootstrap half-spread is below one tick"));
        }
        book.place_at_tick(Side::Buy, -k, 0);
        book.place_at_tick(Side::Sell, k, 0);
        Ok(book)
    }

    pub fn tick(&self) -> f64 {
        self.tick
    }

    pub fn best_bid_tick(&self) -> Option<i64> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask_tick(&self) -> Option<i64> {
        self.asks.keys().next().copied()
    }

    pub fn best_tick(&self, side: Side) -> Option<i64> {
        match side {
            Side::Buy => self.best_bid_tick(),
            Side::Sell => self.best_ask_tick(),
        }
    }

    pub fn depth(&self) -> usize {
        self.resting.len()
    }

    pub fn counters(&self) -> BookCounters {
        self.counters
    }

    pub fn order(&self, id: OrderId) -> Option<&Order> {
        self.orders.get(&id)
    }

    pub fn bids(&self) -> &BTreeMap<i64, VecDeque<OrderId>> {
        &self.bids
    }

    pub fn asks(&self) -> &BTreeMap<i64, VecDeque<OrderId>> {
        &self.asks
    }

    /// Midpoint of the best quotes in log-price units.
    pub fn mid_log_price(&self) -> Option<f64> {
        match (self.best_bid_tick(), self.best_ask_tick()) {
            (Some(b), Some(a)) => Some(0.5 * (b + a) as f64 * self.tick),
            _ => None,
        }
    }

    /// Place an order at relative price `x` from the best quote on its own side.
    pub fn place_order(&mut self, side: Side, x: f64, time: u64) -> Result<PlaceOutcome> {
        let anchor = self.best_tick(side).ok_or_else(|| {
            Error::BookState(format!("no {} quote to anchor the relative price", side.as_str()))
        })?;
        Ok(self.place_order_anchored(side, x, anchor as f64, time))
    }

    /// Place an order at relative price `x` from an explicit anchor given in
    /// (possibly fractional) ticks.
    ///
    /// Buy price is `anchor + x`, sell price is `anchor - x`. The rounding to
    /// ticks resolves exact halves away from the opposite side of the book.
    pub fn place_order_anchored(&mut self, side: Side, x: f64, anchor_tick: f64, time: u64) -> PlaceOutcome {
        let offset = x / self.tick;
        let tick = match side {
            Side::Buy => (anchor_tick + offset - 0.5).ceil(),
            Side::Sell => (anchor_tick - offset + 0.5).floor(),
        };
        let tick = if tick.is_nan() {
            0
        } else {
            (tick.clamp(-(MAX_TICK as f64), MAX_TICK as f64)) as i64
        };
        self.submit_at_tick(side, tick, time)
    }

    /// Submit an order at an explicit tick, executing it if it crosses.
    pub fn submit_at_tick(&mut self, side: Side, tick: i64, time: u64) -> PlaceOutcome {
        let crosses = match side {
            Side::Buy => self.best_ask_tick().is_some_and(|a| tick >= a),
            Side::Sell => self.best_bid_tick().is_some_and(|b| tick <= b),
        };
        if crosses {
            self.counters.placed += 1;
            self.next_id += 1;
            let price_tick = self.best_tick(opposite(side)).expect("crossing implies a quote");
            let resting_id = self.pop_front(opposite(side), price_tick);
            self.counters.executed += 2;
            self.counters.trades += 1;
            PlaceOutcome::Executed(TradeEvent {
                time,
                price_tick,
                aggressor_side: side,
                resting_id,
            })
        } else {
            PlaceOutcome::Rested(self.place_at_tick(side, tick, time))
        }
    }

    fn place_at_tick(&mut self, side: Side, tick: i64, time: u64) -> OrderId {
        let id = self.next_id;
        self.next_id += 1;
        self.counters.placed += 1;
        let order = Order {
            id,
            side,
            tick,
            entry_time: time,
            slot: self.resting.len(),
        };
        self.resting.push(id);
        self.orders.insert(id, order);
        self.levels_mut(side).entry(tick).or_default().push_back(id);
        id
    }

    fn levels_mut(&mut self, side: Side) -> &mut BTreeMap<i64, VecDeque<OrderId>> {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    fn pop_front(&mut self, side: Side, tick: i64) -> OrderId {
        let levels = self.levels_mut(side);
        let queue = levels.get_mut(&tick).expect("level exists");
        let id = queue.pop_front().expect("levels are never empty");
        if queue.is_empty() {
            levels.remove(&tick);
        }
        self.forget(id);
        id
    }

    fn forget(&mut self, id: OrderId) {
        let order = self.orders.remove(&id).expect("resting order is indexed");
        let last = *self.resting.last().expect("non-empty");
        self.resting.swap_remove(order.slot);
        if last != id {
            self.orders.get_mut(&last).expect("indexed").slot = order.slot;
        }
    }

    /// Remove a resting order. Returns false if `id` is not in the book.
    pub fn cancel(&mut self, id: OrderId) -> bool {
        let Some(order) = self.orders.get(&id).copied() else {
            return false;
        };
        let levels = self.levels_mut(order.side);
        let queue = levels.get_mut(&order.tick).expect("level exists");
        let pos = queue.iter().position(|&q| q == id).expect("queued");
        queue.remove(pos);
        if queue.is_empty() {
            levels.remove(&order.tick);
        }
        self.forget(id);
        self.counters.cancelled += 1;
        true
    }

    /// Independently cancel each resting order with probability `rate`.
    ///
    /// The number of cancellations is drawn from Binomial(depth, rate) and
    /// that many distinct orders are then chosen uniformly, which has the
    /// same law as per-order Bernoulli thinning.
    pub fn cancel_sweep(&mut self, rate: f64, rng: &mut impl Rng) -> Result<Vec<OrderId>> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::param(format!("cancel rate must be in [0, 1], got {rate}")));
        }
        let n = self.resting.len() as u64;
        if n == 0 || rate == 0.0 {
            return Ok(Vec::new());
        }
        let k = if rate == 1.0 {
            n
        } else {
            Binomial::new(n, rate)
                .map_err(|e| Error::param(format!("binomial: {e}")))?
                .sample(rng)
        };
        let mut cancelled = Vec::with_capacity(k as usize);
        for _ in 0..k {
            let slot = rng.random_range(0..self.resting.len());
            let id = self.resting[slot];
            self.cancel(id);
            cancelled.push(id);
        }
        Ok(cancelled)
    }
}

fn opposite(side: Side) -> Side {
    match side {
        Side::Buy => Side::Sell,
        Side::Sell => Side::Buy,
    }
}

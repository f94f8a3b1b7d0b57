use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;

use ordermem_core::lob::{OrderBook, Side};
use ordermem_core::scaling::{default_q_grid, default_scales, dfa, mfdfa};
use ordermem_core::simulator::{run_simulation, ModelParams};
use ordermem_core::stochastic::{gen_fgn, rng_from_seed};

fn book(c: &mut Criterion) {
    c.bench_function("book 10k placements", |b| {
        let mut rng = rng_from_seed(1);
        let orders: Vec<(Side, f64)> = (0..10_000)
            .map(|_| {
                let side = if rng.random::<bool>() { Side::Buy } else { Side::Sell };
                (side, rng.random_range(-0.005..0.005))
            })
            .collect();
        b.iter_batched(
            || OrderBook::bootstrap(1e-4, 0.01).unwrap(),
            |mut book| {
                for (t, &(side, x)) in orders.iter().enumerate() {
                    let anchor = book.best_tick(side).unwrap_or(0) as f64;
                    black_box(book.place_order_anchored(side, x, anchor, t as u64));
                }
                book
            },
            BatchSize::SmallInput,
        )
    });
    c.bench_function("simulate 20k events", |b| {
        let params = ModelParams { steps: 20_000, warmup: 1_000, hurst_s: 0.7, hurst_x: 0.7, ..Default::default() };
        b.iter(|| run_simulation(black_box(&params)).unwrap())
    });
}

fn fgn(c: &mut Criterion) {
    c.bench_function("fgn 2^16", |b| b.iter(|| gen_fgn(1 << 16, black_box(0.8), 3).unwrap()));
}

fn scaling(c: &mut Criterion) {
    let x = gen_fgn(1 << 16, 0.7, 5).unwrap().values;
    let scales = default_scales(x.len()).unwrap();
    c.bench_function("dfa 2^16", |b| b.iter(|| dfa(black_box(&x), 1, &scales).unwrap()));
    let y = &x[..1 << 14];
    let scales = default_scales(y.len()).unwrap();
    let qs = default_q_grid();
    c.bench_function("mfdfa 2^14 x 41 q", |b| b.iter(|| mfdfa(black_box(y), &qs, &scales).unwrap()));
}

criterion_group!(benches, book, fgn, scaling);
criterion_main!(benches);

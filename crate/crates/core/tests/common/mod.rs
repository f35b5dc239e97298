//! Independent reference implementations used to check the library numerics.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdm_core::pk::{CovariateRecord, Event, EventTimeline, IndividualParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adaptive Dormand–Prince 5(4) integration of `y' = f(t, y)` from `t0` to `t1`.
pub fn dopri5<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    y0: [f64; N],
    t0: f64,
    t1: f64,
    rtol: f64,
    atol: f64,
) -> [f64; N] {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut t = t0;
    let mut y = y0;
    if t1 <= t0 {
        return y;
    }
    let mut h = ((t1 - t0) / 100.0).min(0.05);
    while t < t1 {
        h = h.min(t1 - t);
        let mut k = [[0.0; N]; 7];
        for s in 0..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                for i in 0..N {
                    ys[i] += h * A[s][j] * kj[i];
                }
            }
            k[s] = f(t + C[s] * h, &ys);
        }
        let mut y5 = y;
        let mut err: f64 = 0.0;
        for i in 0..N {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][i];
                d4 += B4[s] * k[s][i];
            }
            y5[i] += h * d5;
            let sc = atol + rtol * y[i].abs().max(y5[i].abs());
            err = err.max((h * (d5 - d4)).abs() / sc);
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    y
}

/// Concentrations (ng/mL) at each observation event of `tl`, integrating the depot/central
/// ODE numerically. `params[d]` applies on the `d`-th day starting at `first_pod`.
pub fn rk_concentrations(tl: &EventTimeline, params: &[IndividualParams], first_pod: i64) -> Vec<f64> {
    let p_at = |pod: i64| params[(pod - first_pod) as usize];
    let mut state = [0.0_f64, 0.0];
    let mut t = tl.events().first().map_or(0.0, Event::time);
    let mut out = Vec::new();
    for ev in tl.events() {
        let target = ev.time();
        while t < target {
            let pod = tl.pod_at(t);
            let end = tl.pod_start(pod + 1).min(target);
            let p = p_at(pod);
            let k = p.cl / p.v;
            state = dopri5(
                |_, y| [-p.ka * y[0], p.ka * y[0] - k * y[1]],
                state,
                t,
                end,
                1e-12,
                1e-15,
            );
            t = end;
        }
        match ev {
            Event::Dose { amount, .. } => state[0] += amount,
            Event::Observation { .. } => out.push(state[1] / p_at(tl.pod_at(target)).v * 1000.0),
        }
    }
    out
}

/// Random dosing/sampling regimen over `n_days` days starting on POD 1.
pub fn random_regimen(rng: &mut ChaCha8Rng, id: &str, n_days: u32) -> EventTimeline {
    let mut events = Vec::new();
    for day in 0..n_days {
        let base = f64::from(day) * 24.0;
        for _ in 0..rng.random_range(1..=3) {
            events.push(Event::Dose {
                time: base + rng.random_range(0.0..23.5),
                amount: rng.random_range(0.5..10.0),
            });
        }
    }
    let first_dose = events.iter().map(Event::time).fold(f64::INFINITY, f64::min);
    let end = f64::from(n_days) * 24.0 - 0.01;
    let mut times: Vec<f64> = (0..rng.random_range(2..=8))
        .map(|_| rng.random_range(first_dose + 0.05..end))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    for t in times {
        events.push(Event::Observation {
            time: t,
            value: None,
            mdv: true,
        });
    }
    let covs: BTreeMap<u32, CovariateRecord> = (1..=n_days)
        .map(|pod| {
            (
                pod,
                CovariateRecord {
                    alb: Some(30.0),
                    asat: Some(100.0),
                    weight: Some(70.0),
                },
            )
        })
        .collect();
    EventTimeline::new(id, events, covs, 1).expect("valid regimen")
}

/// Upper-tail probability `P(W+ >= w_plus)` by enumerating every sign assignment of `ranks`.
pub fn enumerate_upper_tail(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w >= w_plus - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Average ranks of `x` (1-based) computed by counting.
pub fn count_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Median by full sort.
pub fn naive_median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Percentage of `pe` with `|pe| <= limit`.
pub fn naive_fraction_within(pe: &[f64], limit: f64) -> f64 {
    let mut hits = 0;
    for &e in pe {
        if e.abs() <= limit {
            hits += 1;
        }
    }
    100.0 * hits as f64 / pe.len() as f64
}

/// Composite Simpson's rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Argmin of `f` on `[lo, hi]`: a coarse grid followed by a fine grid around the best cell.
pub fn grid_argmin_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, coarse: f64, fine: f64) -> (f64, f64) {
    let scan = |a: f64, b: f64, step: f64| {
        let n = ((b - a) / step).round() as usize;
        (0..=n)
            .map(|i| a + i as f64 * step)
            .map(|x| (x, f(x)))
            .fold((f64::NAN, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
    };
    let (x0, _) = scan(lo, hi, coarse);
    scan(x0 - 2.0 * coarse, x0 + 2.0 * coarse, fine)
}

//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;

use common::{bin, path_str, Csv};
use label_audit::advantage::{
    additive_iadv_geom, additive_iadv_rr, advantage_samples, mean_stderr, rr_gap_via_posterior, scatter_samples,
};
use label_audit::bounds::{
    bounds_grid, confbased_exceedance, rr_worstcase_adv, thm1_exact, thm1_upper, BoundsGridConfig,
};
use label_audit::data::{gen_beta, gen_independent, gen_uniform};
use label_audit::learner::{frontier_at, propmatch_gradient, propmatch_loss, tradeoff_sweep, SweepConfig};
use label_audit::mechanisms::{llp_lap_privatize, llp_partition, llp_privatize};
use label_audit::pbin::pbin_pmf;
use label_audit::posterior::{llp_geom_posterior, llp_posterior};
use label_audit::rng::substream;
use label_audit::{BagModel, BagOutcome, LinearModel, MechanismKind, PrivOutput, PrivacyParams};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// `P(sum = s, y_i = 1)` and `P(sum = s, y_i = 0)` by enumerating all label vectors.
fn enumerate_joint(etas: &[f64], i: usize) -> Vec<(f64, f64)> {
    let k = etas.len();
    let mut joint = vec![(0.0, 0.0); k + 1];
    for mask in 0u32..(1 << k) {
        let mut pr = 1.0;
        for (j, &e) in etas.iter().enumerate() {
            pr *= if mask >> j & 1 == 1 { e } else { 1.0 - e };
        }
        let s = mask.count_ones() as usize;
        if mask >> i & 1 == 1 {
            joint[s].0 += pr;
        } else {
            joint[s].1 += pr;
        }
    }
    joint
}

/// Clipped two-sided geometric channel on counts, `q = e^-eps`.
fn clipped_geom(s: usize, j: usize, k: usize, eps: f64) -> f64 {
    let q = (-eps).exp();
    let d = (j as i64 - s as i64).unsigned_abs() as i32;
    if j == 0 {
        q.powi(s as i32) / (1.0 + q)
    } else if j == k {
        q.powi((k - s) as i32) / (1.0 + q)
    } else {
        (1.0 - q) / (1.0 + q) * q.powi(d)
    }
}

fn posterior_oracle() -> Outcome {
    let mut rng = substream(101, 0, 0);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..200 {
        let k = rng.random_range(1..=10);
        let etas: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..0.99)).collect();
        let eps = 2f64.powf(rng.random_range(-3.0..3.0));
        let model = BagModel::new(&etas).map_err(|e| e.to_string())?;
        for i in 0..k {
            let joint = enumerate_joint(&etas, i);
            for s in 0..=k {
                let (a, b) = joint[s];
                let want = a / (a + b);
                let got = llp_posterior(&etas, i, s).map_err(|e| e.to_string())?;
                let tree = model.posterior(i, BagOutcome::Sum(s)).map_err(|e| e.to_string())?;
                worst = worst.max((got - want).abs()).max((tree - want).abs());
                checked += 2;
            }
            for j in 0..=k {
                let (mut a, mut b) = (0.0, 0.0);
                for (s, &(a_s, b_s)) in joint.iter().enumerate() {
                    let l = clipped_geom(s, j, k, eps);
                    a += a_s * l;
                    b += b_s * l;
                }
                let want = a / (a + b);
                let got = llp_geom_posterior(&etas, i, j as f64 / k as f64, eps).map_err(|e| e.to_string())?;
                let tree = model
                    .posterior(i, BagOutcome::Grid { j, epsilon: eps })
                    .map_err(|e| e.to_string())?;
                worst = worst.max((got - want).abs()).max((tree - want).abs());
                checked += 2;
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max error {worst:e}"))?;
    Ok(format!("{checked} posteriors, max error {worst:.1e}"))
}

/// Label-sampling MC of the LLP advantage on constant-prior data: informed
/// minus uninformed success of the Bayes guess, ties counting one half.
///
/// Returns the MC mean and its standard error. The per-bag gain depends only
/// on the bag sum, which is Binomial(k, p), so the standard error is computed
/// from that distribution. The sample standard error is useless where the
/// guess flips only on sums of probability far below one over the bag count.
fn llp_advantage_mc(p: f64, k: usize, bags: usize, seed: u64) -> Result<(f64, f64), String> {
    let ds = gen_independent(p, k * bags, seed).map_err(|e| e.to_string())?;
    let assignment = llp_partition(ds.len(), k, &mut substream(seed, 0, 0)).map_err(|e| e.to_string())?;
    let etas = vec![p; k];
    let pmf = pbin_pmf(&etas).map_err(|e| e.to_string())?.into_pmf();
    // sums whose mass underflows never occur and carry no weight below
    let post: Vec<f64> = (0..=k)
        .map(|s| if pmf[s] > 0.0 { llp_posterior(&etas, 0, s) } else { Ok(f64::NAN) })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let success = |pi: f64, y: u8| -> f64 {
        if pi == 0.5 {
            0.5
        } else if (pi > 0.5) == (y == 1) {
            1.0
        } else {
            0.0
        }
    };
    let gain = |s: usize| -> f64 {
        let ones = s as f64 * (success(post[s], 1) - success(p, 1));
        let zeros = (k - s) as f64 * (success(post[s], 0) - success(p, 0));
        (ones + zeros) / k as f64
    };
    let per_bag: Vec<f64> = assignment
        .bags
        .iter()
        .map(|bag| {
            let s = bag.iter().map(|&j| ds.labels[j] as usize).sum::<usize>();
            bag.iter()
                .map(|&j| success(post[s], ds.labels[j]) - success(p, ds.labels[j]))
                .sum::<f64>()
                / k as f64
        })
        .collect();
    let (mean, _) = mean_stderr(&per_bag);
    let support = || pmf.iter().enumerate().filter(|(_, &w)| w > 0.0);
    let mu: f64 = support().map(|(s, w)| w * gain(s)).sum();
    let var: f64 = support().map(|(s, w)| w * (gain(s) - mu).powi(2)).sum();
    Ok((mean, (var / per_bag.len() as f64).sqrt()))
}

fn llp_constant_prior() -> Outcome {
    let mut worst_z = 0.0f64;
    for (pi, &p) in [0.05, 0.1, 0.3, 0.5].iter().enumerate() {
        for e in 0..=9 {
            let k = 1usize << e;
            let exact = thm1_exact(p, k).map_err(|e| e.to_string())?;
            let upper = thm1_upper(p, k).map_err(|e| e.to_string())?;
            ensure(exact <= upper + 1e-15, || format!("p={p} k={k}: exact {exact} > sqrt bound {upper}"))?;
            let (mean, se) = llp_advantage_mc(p, k, 10_000, (pi * 16 + e) as u64)?;
            ensure((mean - exact).abs() <= 3.0 * se + 1e-12, || {
                format!("p={p} k={k}: MC {mean} +- {se} vs exact {exact}")
            })?;
            let excess = ((mean - exact).abs() - 1e-12).max(0.0);
            if excess > 0.0 {
                worst_z = worst_z.max(excess / se);
            }
        }
    }
    Ok(format!("40 grid points, worst |z| = {worst_z:.2}"))
}

fn rr_closed_form() -> Outcome {
    let mut rng = substream(105, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let eta: f64 = rng.random();
        let eps = 2f64.powf(rng.random_range(-5.0..5.0));
        let closed = additive_iadv_rr(eta, eps).map_err(|e| e.to_string())?.value;
        let generic = rr_gap_via_posterior(eta, eps).map_err(|e| e.to_string())?;
        worst = worst.max((closed - generic).abs());
        let cap = rr_worstcase_adv(eps).map_err(|e| e.to_string())?;
        ensure(closed <= cap, || format!("eta={eta} eps={eps}: {closed} > {cap}"))?;
    }
    ensure(worst <= 1e-12, || format!("max closed-form gap {worst:e}"))?;
    let at_one = rr_worstcase_adv(1.0f64).map_err(|e| e.to_string())?;
    ensure((at_one - 0.4621).abs() < 1e-4, || format!("worst case at eps=1 is {at_one}"))?;
    Ok(format!("1000 draws, max difference {worst:.1e}, worst case at eps=1 {at_one:.4}"))
}

fn bound_dominance() -> Outcome {
    let cfg = BoundsGridConfig {
        ps: vec![0.1, 0.5],
        ks: vec![16, 64, 256],
        deltas: vec![],
        conf_ks: vec![],
        epsilons: vec![],
        trials: 10_000,
        seed: 104,
        ..BoundsGridConfig::default()
    };
    let rows = bounds_grid(&cfg).map_err(|e| e.to_string())?;
    let relevant: Vec<_> = rows.iter().filter(|r| r.bound_name == "lemma_a1" || r.bound_name == "truebound").collect();
    ensure(relevant.len() == 12, || format!("expected 12 rows, got {}", relevant.len()))?;
    for r in &relevant {
        ensure(r.satisfied, || format!("{r:?}"))?;
    }
    let tightest = relevant
        .iter()
        .filter(|r| r.bound_name == "lemma_a1")
        .map(|r| r.empirical_value / r.bound_value)
        .fold(0.0, f64::max);
    Ok(format!("12 rows satisfied, largest lemma_a1 empirical/bound ratio {tightest:.3}"))
}

fn large_bag_tail() -> Outcome {
    let k = 4096;
    let etas = vec![0.5; k];
    // sums this far out keep their Binomial mass representable in f64
    for s in [1500, 1900, 2048, 2100, 2600] {
        let post = llp_posterior(&etas, 0, s).map_err(|e| e.to_string())?;
        ensure((post - s as f64 / k as f64).abs() < 1e-9, || format!("posterior at s={s} is {post}"))?;
    }
    let mut lines = Vec::new();
    for (i, delta) in [0.1, 0.01].into_iter().enumerate() {
        let (bound, freq) = confbased_exceedance(0.5, k, delta, 100_000, 400 + i as u64).map_err(|e| e.to_string())?;
        ensure(freq.value <= delta + 3.0 * freq.stderr, || {
            format!("delta={delta}: exceedance {} +- {} above bound {bound}", freq.value, freq.stderr)
        })?;
        lines.push(format!("delta={delta}: bound {bound:.4}, exceedance {:.5}", freq.value));
    }
    Ok(lines.join("; "))
}

fn mult_boundedness() -> Outcome {
    let ds = gen_uniform(20_000, 0, 106).map_err(|e| e.to_string())?;
    let mut max_excess = f64::NEG_INFINITY;
    for eps in [0.25, 1.0, 4.0] {
        let recs = scatter_samples(&ds, &PrivacyParams::rr(eps), 2, 106).map_err(|e| e.to_string())?;
        let (samples, _) = advantage_samples(&recs);
        for s in &samples {
            ensure(s.mult_adv.abs() <= eps + 1e-12, || format!("eps={eps}: |I| = {}", s.mult_adv.abs()))?;
            max_excess = max_excess.max(s.mult_adv.abs() - eps);
        }
    }

    let k = 8;
    let bags = 50_000;
    let beta = gen_beta(2.0, 30.0, k * bags, 0, 107).map_err(|e| e.to_string())?;
    let recs = scatter_samples(&beta, &PrivacyParams::llp(k), 1, 107).map_err(|e| e.to_string())?;
    let mut homogeneous = Vec::with_capacity(bags);
    for bag in recs.chunks(k) {
        let inf = bag.iter().map(|r| r.posterior == 0.0 || r.posterior == 1.0).collect::<Vec<_>>();
        ensure(inf.iter().all(|&v| v == inf[0]), || "bag with mixed certainty".into())?;
        homogeneous.push(inf[0] as u8 as f64);
    }
    let (freq, se) = mean_stderr(&homogeneous);
    let exact = (30.0f64 / 32.0).powi(k as i32) + (2.0f64 / 32.0).powi(k as i32);
    ensure((freq - exact).abs() <= 3.0 * se, || format!("infinite-sample frequency {freq} +- {se} vs {exact}"))?;
    Ok(format!(
        "RR max |I| - eps = {max_excess:.1e}; LLP k=8 homogeneous frequency {freq:.4} +- {se:.4} vs exact {exact:.4}"
    ))
}

fn gradient_properties() -> Outcome {
    let k = 8;
    let nbags = 16;
    let ds = gen_uniform(k * nbags, 1, 108).map_err(|e| e.to_string())?;
    let etas = ds.etas_or_err().map_err(|e| e.to_string())?.to_vec();
    let model = LinearModel { weights: vec![0.7, -0.4], bias: 0.2 };
    let bags = llp_partition(ds.len(), k, &mut substream(108, 0, 0)).map_err(|e| e.to_string())?;
    let mean_grad = |alphas: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; 3];
        for (b, &a) in bags.bags.iter().zip(alphas) {
            for (s, v) in g.iter_mut().zip(propmatch_gradient(&model, &ds.features, b, a)) {
                *s += v;
            }
        }
        g.iter().map(|v| v / nbags as f64).collect()
    };

    // unbiasedness under Laplace noise, labels fixed
    let PrivOutput::Proportions(exact) = llp_privatize(&ds.labels, &bags).map_err(|e| e.to_string())? else {
        return Err("unexpected output".into());
    };
    let clean = mean_grad(&exact);
    let mut draws: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(100_000)).collect();
    for t in 0..100_000u64 {
        let PrivOutput::RealProportions(a) =
            llp_lap_privatize(&ds.labels, &bags, 0.5, &mut substream(108, 1, t)).map_err(|e| e.to_string())?
        else {
            return Err("unexpected output".into());
        };
        for (c, v) in mean_grad(&a).into_iter().enumerate() {
            draws[c].push(v);
        }
    }
    for c in 0..3 {
        let (m, se) = mean_stderr(&draws[c]);
        ensure((m - clean[c]).abs() <= 3.0 * se, || format!("coord {c}: noisy mean {m} +- {se} vs {}", clean[c]))?;
    }

    // variance excess over label sampling alone, per unit Var(Z) = 2 / (k eps)^2
    let n = 20_000u64;
    let variance = |eps: f64, stream: u64| -> Result<Vec<f64>, String> {
        let mut cols: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(n as usize)).collect();
        for t in 0..n {
            let mut rng = substream(109, stream, t);
            let labels: Vec<u8> = etas.iter().map(|&e| rng.random_bool(e) as u8).collect();
            let out = llp_lap_privatize(&labels, &bags, eps, &mut rng).map_err(|e| e.to_string())?;
            let (PrivOutput::RealProportions(a) | PrivOutput::Proportions(a)) = out else {
                return Err("unexpected output".into());
            };
            for (c, v) in mean_grad(&a).into_iter().enumerate() {
                cols[c].push(v);
            }
        }
        Ok(cols
            .iter()
            .map(|col| {
                let m = col.iter().sum::<f64>() / col.len() as f64;
                col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64
            })
            .collect())
    };
    let base = variance(f64::INFINITY, 0)?;
    // the gradient is affine in the proportion, so the excess per unit noise
    // variance is sum_b a_b^2 / B^2 with a_b its slope
    let slope = |b: &[usize]| -> Vec<f64> {
        let g0 = propmatch_gradient(&model, &ds.features, b, 0.0);
        let g1 = propmatch_gradient(&model, &ds.features, b, 1.0);
        g0.iter().zip(&g1).map(|(x, y)| x - y).collect()
    };
    let mut predicted = vec![0.0; 3];
    for b in &bags.bags {
        for (p, a) in predicted.iter_mut().zip(slope(b)) {
            *p += a * a / (nbags * nbags) as f64;
        }
    }
    let mut ratios = Vec::new();
    for (i, eps) in [0.25, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let var = variance(eps, 1 + i as u64)?;
        let var_z = 2.0 / (k as f64 * eps).powi(2);
        for c in 0..3 {
            if eps == 0.25 {
                ensure(var[c] > base[c], || format!("coord {c}: variance {} not above noiseless {}", var[c], base[c]))?;
            }
            let r = (var[c] - base[c]) / var_z / predicted[c];
            ensure((0.5..=2.0).contains(&r), || format!("eps={eps} coord {c}: excess ratio {r}"))?;
            ratios.push(r);
        }
    }
    let spread = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(spread <= 2.0, || format!("excess ratios spread by {spread}"))?;

    // analytic gradient against central differences
    let mut rng = substream(110, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let params: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let m = LinearModel::from_params(&params);
        let size = rng.random_range(1..=16);
        let bag: Vec<usize> = (0..size).map(|_| rng.random_range(0..ds.len())).collect();
        let alpha = rng.random_range(-0.3..1.3);
        let g = propmatch_gradient(&m, &ds.features, &bag, alpha);
        for c in 0..3 {
            let h = 1e-6;
            let mut up = params.clone();
            up[c] += h;
            let mut dn = params.clone();
            dn[c] -= h;
            let fd = (propmatch_loss(&LinearModel::from_params(&up), &ds.features, &bag, alpha)
                - propmatch_loss(&LinearModel::from_params(&dn), &ds.features, &bag, alpha))
                / (2.0 * h);
            let rel = (g[c] - fd).abs() / g[c].abs().max(1e-3);
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-5, || format!("finite-difference relative error {worst:e}"))?;
    Ok(format!("noise-excess ratios in [{:.3}, {:.3}], finite-difference error {worst:.1e}", spread.recip().min(1.0), spread))
}

fn k1_equivalence() -> Outcome {
    let mut rng = substream(111, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let eta: f64 = rng.random();
        let eps = 2f64.powf(rng.random_range(-4.0..5.0));
        let g = additive_iadv_geom(&[eta], 0, eps).map_err(|e| e.to_string())?.value;
        let r = additive_iadv_rr(eta, eps).map_err(|e| e.to_string())?.value;
        worst = worst.max((g - r).abs());
    }
    ensure(worst <= 1e-12, || format!("max difference {worst:e}"))?;
    Ok(format!("100 draws, max difference {worst:.1e}"))
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("d.csv");
    let d = path_str(&data).to_owned();
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--dist", "beta", "--a", "2", "--b", "30", "--m", "3000", "--seed", "11"],
        vec!["audit", "--dataset", &d, "--mechanism", "llp-geom", "--bag-size", "8", "--epsilon", "1", "--trials", "2000", "--seed", "3"],
        vec!["audit", "--dataset", &d, "--mechanism", "llp-lap", "--bag-size", "4", "--epsilon", "2", "--trials", "500", "--seed", "3"],
        vec!["scatter", "--dataset", &d, "--mechanism", "rr", "--epsilon", "1", "--runs", "2", "--seed", "5"],
        vec!["cdf", "--dataset", &d, "--mechanism", "llp", "--bag-size", "8", "--seed", "5", "--format", "json"],
        vec![
            "tradeoff", "--dataset", &d, "--epsilons", "0.5,4", "--bag-sizes", "1,8", "--learning-rates", "0.001,0.01",
            "--runs", "2", "--adv-trials", "100", "--seed", "9",
        ],
        vec!["bounds-check", "--ks", "16", "--conf-ks", "4096", "--deltas", "0.1", "--epsilons", "1", "--trials", "200", "--seed", "2"],
    ];
    let mut outputs = Vec::new();
    for rep in 0..2 {
        for (i, args) in commands.iter().enumerate() {
            let path = dir.path().join(format!("out_{i}_{rep}"));
            let mut full = args.clone();
            // the first gen-data run writes the dataset the other commands read
            let target = if i == 0 && rep == 0 { d.as_str() } else { path_str(&path) };
            full.extend(["--out", target]);
            let out = bin().args(&full).env("LABEL_AUDIT_THREADS", "1").output().map_err(|e| e.to_string())?;
            ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
            let bytes = fs::read(if i == 0 && rep == 0 { data.clone() } else { path }).map_err(|e| e.to_string())?;
            outputs.push(bytes);
        }
    }
    let n = commands.len();
    for i in 0..n {
        ensure(outputs[i] == outputs[n + i], || format!("{:?} differs between runs", commands[i]))?;
    }
    // the parallel pool reproduces the serial bytes as well
    let par = bin().args(&commands[1]).output().map_err(|e| e.to_string())?;
    let serial = Csv::parse(&String::from_utf8_lossy(&outputs[1]));
    let par = Csv::parse(&String::from_utf8_lossy(&par.stdout));
    ensure(par.rows == serial.rows, || "parallel audit differs from serial".into())?;
    Ok(format!("{n} commands byte-identical across repeated serial runs"))
}

/// Frontier comparisons at matched AUC on `gen_beta(2, 30)`.
/// The CLI's default sweep (full grids, all nine learning rates) on the
/// default synthetic dataset.
fn desk_tradeoff() -> Outcome {
    let ds = gen_beta(2.0, 30.0, 200_000, 2, 112).map_err(|e| e.to_string())?;
    let (train, eval) = ds.split(0.5);
    let cfg = SweepConfig { seed: 112, ..SweepConfig::default() };
    let rows = tradeoff_sweep(&train, &eval, &cfg).map_err(|e| e.to_string())?;
    summarize_tradeoff(&rows)
}

/// Walks AUC targets down from the best AUC all three mechanisms reach and
/// compares their frontiers at each. Only rows whose mean AUC has a standard
/// error within `AUC_STDERR_LIMIT` take part, since a noisier mean cannot be
/// matched to within 0.005. Frontier values are compared with a relative
/// tolerance of 1e-9, which only absorbs rounding.
fn summarize_tradeoff(all_rows: &[label_audit::TradeoffRow]) -> Outcome {
    const TOL: f64 = 0.005;
    let rows: Vec<_> = all_rows.iter().filter(|r| r.auc_stderr_ok).cloned().collect();
    let rows = rows.as_slice();
    let le = |a: f64, b: f64| a <= b || a - b <= 1e-9 * b.abs();
    let clean = rows.iter().find(|r| r.mechanism == MechanismKind::Null).ok_or("no null row")?.auc_mean;
    let best = |m: MechanismKind| rows.iter().filter(|r| r.mechanism == m).map(|r| r.auc_mean).fold(0.0, f64::max);
    let top = best(MechanismKind::Rr).min(best(MechanismKind::Llp)).min(best(MechanismKind::LlpGeom));
    let mult = |r: &label_audit::TradeoffRow| r.mult_adv_p98;
    let add = |r: &label_audit::TradeoffRow| r.additive_adv;
    let mut violations = Vec::new();
    let mut checked = 0;
    let mut worst_add = 0.0f64;
    let mut target = top;
    while target >= 0.5 {
        let f = |m, metric: &dyn Fn(&label_audit::TradeoffRow) -> f64| frontier_at(rows, m, target, TOL, metric);
        if let (Some(rr), Some(llp), Some(geom)) =
            (f(MechanismKind::Rr, &mult), f(MechanismKind::Llp, &mult), f(MechanismKind::LlpGeom, &mult))
        {
            checked += 1;
            if !le(rr, llp) {
                violations.push(format!("AUC {target:.4}: RR p98 {rr:.4} > LLP {llp:.4}"));
            }
            if !(le(rr, geom) && le(geom, llp)) {
                violations.push(format!("AUC {target:.4}: LLP+Geom p98 {geom:.4} outside [RR {rr:.4}, LLP {llp:.4}]"));
            }
            let a: Vec<f64> = [MechanismKind::Rr, MechanismKind::Llp, MechanismKind::LlpGeom]
                .iter()
                .filter_map(|&m| f(m, &add))
                .collect();
            let spread = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - a.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 0.02 {
                violations.push(format!("AUC {target:.4}: additive spread {spread:.4}"));
            }
            worst_add = worst_add.max(spread);
        }
        target -= TOL;
    }
    ensure(checked > 0, || "no matched AUC level".into())?;
    let summary = format!(
        "clean AUC {clean:.4}, {} of {} rows within the AUC stderr limit, {checked} matched AUC levels, max additive spread {worst_add:.4}",
        rows.len(),
        all_rows.len()
    );
    if violations.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {} violations: {}", violations.len(), violations.join("; ")))
    }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("posterior oracle equivalence", posterior_oracle),
        ("LLP constant-prior advantage exactness", llp_constant_prior),
        ("RR closed-form advantage", rr_closed_form),
        ("bound dominance", bound_dominance),
        ("large-bag multiplicative tail", large_bag_tail),
        ("RR multiplicative boundedness vs LLP unboundedness", mult_boundedness),
        ("gradient properties", gradient_properties),
        ("desk-scale tradeoff reproduction", desk_tradeoff),
        ("k=1 equivalence", k1_equivalence),
        ("CLI determinism", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use driftbench::bgmetrics::{average_precision, bg_report, split_by_bg, EvalFrame, MetricSelection};
use driftbench::calibration::{dece, dece_oracle, CalibSample, DeceConfig};
use driftbench::formats::FeatureVectorSet;
use driftbench::mcdo_nms::{associate_passes, list_uncertainty};
use driftbench::rng::CounterRng;
use driftbench::scoremap::{build_score_map, dataset_scalar, frame_mcdo_map, mcdo_map, mcdo_map_scalar};
use driftbench::shift::{correlation_matrix, feature_kl, histogram, kl_divergence, Histogram, MetricSeries};
use driftbench::synthgen::{generate, shift_pair, ScenarioConfig, ShiftKnobs, SynthDomain};
use driftbench::uda::{adv_loss, fixture_maps, gradient_check, interpolate_maps, train_discriminator, ToyDiscriminator, TrainConfig};
use driftbench::{BBox, Detection, GtBox};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("AP oracle equivalence", ap_oracle),
        ("D-ECE oracle equivalence", dece_equivalence),
        ("score-map analytics", score_map_analytics),
        ("MCDO-map shift sensitivity", mcdo_shift_sensitivity),
        ("correlation pipeline", correlation_pipeline),
        ("KL properties", kl_properties),
        ("background-wise partitioning", background_partitioning),
        ("MCDO-NMS", mcdo_nms),
        ("UDA simulation", uda_simulation),
        ("determinism and throughput", determinism_and_throughput),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).unwrap()
}

// ---------------------------------------------------------------- AP oracle

/// Exact rational with positive denominator.
#[derive(Clone, Copy, Debug)]
struct Q(i128, i128);

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Q {
    fn new(n: i128, d: i128) -> Q {
        let g = gcd(n, d).max(1);
        Q(n / g, d / g)
    }
    fn add(self, o: Q) -> Q {
        Q::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    fn sub(self, o: Q) -> Q {
        Q::new(self.0 * o.1 - o.0 * self.1, self.1 * o.1)
    }
    fn mul(self, o: Q) -> Q {
        Q::new(self.0 * o.0, self.1 * o.1)
    }
    fn cmp(self, o: Q) -> Ordering {
        (self.0 * o.1).cmp(&(o.0 * self.1))
    }
    fn to_f64(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

/// Integer box corners; IoU compared exactly as intersection / union.
type IBox = [i64; 4];

fn inter_union(a: &IBox, b: &IBox) -> (i128, i128) {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0);
    let i = (iw * ih) as i128;
    let area = |x: &IBox| ((x[2] - x[0]) * (x[3] - x[1])) as i128;
    (i, area(a) + area(b) - i)
}

struct OFrame {
    dets: Vec<(IBox, u32, f64)>,
    gts: Vec<(IBox, u32)>,
}

/// Brute-force AP@0.5: exact matching, then the area under the
/// interpolated precision/recall curve in rationals, averaged over classes
/// with ground truth.
fn oracle_ap(frames: &[OFrame]) -> Option<Q> {
    // (score, frame, rank, class, tp)
    let mut hits: Vec<(f64, usize, usize, u32, bool)> = Vec::new();
    let mut n_gt: BTreeMap<u32, i128> = BTreeMap::new();
    for (fi, f) in frames.iter().enumerate() {
        for g in &f.gts {
            *n_gt.entry(g.1).or_default() += 1;
        }
        let mut order: Vec<usize> = (0..f.dets.len()).collect();
        order.sort_by(|&a, &b| {
            let (da, db) = (&f.dets[a], &f.dets[b]);
            db.2.partial_cmp(&da.2)
                .unwrap()
                .then(da.0[0].cmp(&db.0[0]))
                .then(da.0[1].cmp(&db.0[1]))
                .then(a.cmp(&b))
        });
        let mut taken = vec![false; f.gts.len()];
        for (rank, &i) in order.iter().enumerate() {
            let d = &f.dets[i];
            let mut best: Option<(usize, i128, i128)> = None;
            for (g, gt) in f.gts.iter().enumerate() {
                if taken[g] || gt.1 != d.1 {
                    continue;
                }
                let (inter, union) = inter_union(&d.0, &gt.0);
                if 2 * inter < union {
                    continue;
                }
                if best.map_or(true, |(_, bi, bu)| inter * bu > bi * union) {
                    best = Some((g, inter, union));
                }
            }
            if let Some((g, _, _)) = best {
                taken[g] = true;
            }
            hits.push((d.2, fi, rank, d.1, best.is_some()));
        }
    }
    if n_gt.is_empty() {
        return None;
    }
    hits.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut total = Q(0, 1);
    for (&class, &n) in &n_gt {
        let (mut tp, mut k) = (0i128, 0i128);
        let mut rec = vec![Q(0, 1)];
        let mut pre = vec![Q(0, 1)];
        for h in hits.iter().filter(|h| h.3 == class) {
            k += 1;
            tp += h.4 as i128;
            rec.push(Q::new(tp, n));
            pre.push(Q::new(tp, k));
        }
        rec.push(Q(1, 1));
        pre.push(Q(0, 1));
        for i in (0..pre.len() - 1).rev() {
            if pre[i].cmp(pre[i + 1]) == Ordering::Less {
                pre[i] = pre[i + 1];
            }
        }
        let mut area = Q(0, 1);
        for i in 0..rec.len() - 1 {
            if rec[i + 1].cmp(rec[i]) != Ordering::Equal {
                area = area.add(rec[i + 1].sub(rec[i]).mul(pre[i + 1]));
            }
        }
        total = total.add(area);
    }
    Some(total.mul(Q::new(1, n_gt.len() as i128)))
}

fn ap_oracle() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..20u64 {
        let mut rng = CounterRng::new(seed, 0xa9);
        let classes = rng.int_in(1, 3) as u32;
        let mut budget = 50u64;
        let mut frames = Vec::new();
        while budget > 0 {
            let n_gt = rng.int_in(0, 8.min(budget));
            let n_det = rng.int_in(0, 12.min(budget - n_gt));
            budget -= n_gt + n_det;
            if n_gt + n_det == 0 {
                break;
            }
            let ibox = |rng: &mut CounterRng| {
                let (x, y) = (rng.int_in(0, 30) as i64, rng.int_in(0, 30) as i64);
                let (w, h) = (rng.int_in(2, 12) as i64, rng.int_in(2, 12) as i64);
                [x, y, x + w, y + h]
            };
            let gts: Vec<(IBox, u32)> = (0..n_gt)
                .map(|_| (ibox(&mut rng), rng.int_in(0, classes as u64 - 1) as u32))
                .collect();
            let dets: Vec<(IBox, u32, f64)> = (0..n_det)
                .map(|_| {
                    // half the detections sit near a GT box so matches happen
                    let b = match gts.get(rng.int_in(0, 2 * n_gt.max(1)) as usize) {
                        Some((g, _)) => {
                            let s = rng.int_in(0, 2) as i64;
                            [g[0] + s, g[1], g[2] + s, g[3]]
                        }
                        None => ibox(&mut rng),
                    };
                    (b, rng.int_in(0, classes as u64 - 1) as u32, rng.int_in(1, 9) as f64 / 10.0)
                })
                .collect();
            frames.push(OFrame { dets, gts });
        }
        let to_f = |b: &IBox| bx(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64);
        let typed: Vec<(Vec<Detection>, Vec<GtBox>)> = frames
            .iter()
            .map(|f| {
                (
                    f.dets.iter().map(|d| Detection::new(to_f(&d.0), d.1, d.2)).collect(),
                    f.gts.iter().map(|g| GtBox { bbox: to_f(&g.0), class_id: g.1 }).collect(),
                )
            })
            .collect();
        let got = average_precision(&typed, 0.5);
        let want = oracle_ap(&frames);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                worst = worst.max((g - w.to_f64()).abs());
                cases += 1;
            }
            _ => return Err(format!("seed {seed}: defined-ness differs ({got:?} vs {want:?})")),
        }
    }
    ensure!(worst <= 1e-12, "max deviation from the exact oracle {worst:e}");

    let g = vec![
        GtBox { bbox: bx(0., 0., 10., 10.), class_id: 0 },
        GtBox { bbox: bx(20., 0., 30., 10.), class_id: 0 },
    ];
    let d = vec![
        Detection::new(bx(0., 0., 10., 10.), 0, 0.9),
        Detection::new(bx(50., 50., 60., 60.), 0, 0.8),
        Detection::new(bx(20., 0., 30., 10.), 0, 0.7),
    ];
    let hand = average_precision(&[(d, g)], 0.5).unwrap();
    ensure!((hand - 5.0 / 6.0).abs() <= 1e-12, "hand case {hand}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs:.3} s");
    Ok(format!(
        "{cases}/20 seeds with GT, max |AP - exact| = {worst:.1e}; hand case 5/6; {:.1} ms",
        secs * 1e3
    ))
}

// ------------------------------------------------------------------- D-ECE

fn dece_equivalence() -> Check {
    let cfg = DeceConfig::default();
    for seed in 0..20u64 {
        let mut rng = CounterRng::new(seed, 0xdece);
        let samples: Vec<CalibSample> = (0..100)
            .map(|_| {
                let mut values = [0.0; 5];
                for v in &mut values {
                    // a third of the coordinates land exactly on a bin edge
                    *v = if rng.bernoulli(1.0 / 3.0) {
                        rng.int_in(0, 10) as f64 / 10.0
                    } else {
                        rng.uniform()
                    };
                }
                CalibSample { values, tp: rng.bernoulli(0.5) }
            })
            .collect();
        let a = dece(&samples, &cfg).map_err(|e| e.to_string())?;
        let b = dece_oracle(&samples, &cfg).map_err(|e| e.to_string())?;
        ensure!(a.joint.to_bits() == b.joint.to_bits(), "seed {seed}: joint {} vs {}", a.joint, b.joint);
        ensure!(
            a.marginal.iter().zip(&b.marginal).all(|(x, y)| x.to_bits() == y.to_bits()),
            "seed {seed}: marginals differ"
        );
        ensure!(a == b, "seed {seed}: cell diagnostics differ");
    }

    let fp = [CalibSample::new(&Detection::new(bx(10., 10., 20., 20.), 0, 0.8), false, 100, 100)];
    let single = dece(&fp, &cfg).map_err(|e| e.to_string())?.joint;
    ensure!(single == 0.8, "single FP gives {single}");

    // one cell holding ten detections at 0.7 with seven true positives
    let calibrated: Vec<CalibSample> = (0..10)
        .map(|i| CalibSample::new(&Detection::new(bx(10., 10., 20., 20.), 0, 0.7), i < 7, 100, 100))
        .collect();
    let perfect = dece(&calibrated, &cfg).map_err(|e| e.to_string())?.joint;
    ensure!(perfect.abs() <= 1e-12, "calibrated fixture gives {perfect}");
    Ok(format!("20/20 sets bit-identical; single FP = {single}; calibrated = {perfect:.1e}"))
}

// -------------------------------------------------------------- score maps

fn score_map_analytics() -> Check {
    let empty = build_score_map(&[], 4, 5, 1).map_err(|e| e.to_string())?;
    let px = empty.pixel(2, 3);
    ensure!(
        (px[0] - 0.26894).abs() < 1e-5 && (px[1] - 0.73106).abs() < 1e-5,
        "empty frame pixel {px:?}"
    );

    let dets = vec![Detection::new(bx(1., 1., 3., 3.), 0, 0.6)];
    let passes = [dets.as_slice(); 3];
    let map = frame_mcdo_map(passes, 4, 5, 1).map_err(|e| e.to_string())?;
    ensure!(map.std_sum().iter().all(|&s| s == 0.0), "identical passes leave nonzero std");
    let h = map.entropy()[0];
    ensure!((h - 0.58220).abs() < 1e-5, "uncovered-pixel entropy {h}");

    let mut rng = CounterRng::new(9, 0x5c0);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let classes = rng.int_in(1, 4) as usize;
        let (hgt, wid) = (rng.int_in(1, 12) as usize, rng.int_in(1, 12) as usize);
        let maps = (0..rng.int_in(2, 4))
            .map(|_| {
                let dets: Vec<Detection> = (0..rng.int_in(0, 6))
                    .map(|_| {
                        let x = rng.uniform_in(0.0, wid as f64 - 0.5);
                        let y = rng.uniform_in(0.0, hgt as f64 - 0.5);
                        let b = bx(x, y, x + rng.uniform_in(0.5, 6.0), y + rng.uniform_in(0.5, 6.0));
                        Detection::new(b, rng.int_in(0, classes as u64 - 1) as u32, rng.uniform())
                    })
                    .collect();
                build_score_map(&dets, hgt, wid, classes)
            })
            .collect::<driftbench::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let m = mcdo_map(&maps).map_err(|e| e.to_string())?;
        let bound = ((classes + 1) as f64).ln();
        for &e in m.entropy() {
            worst = worst.max(e - bound);
        }
    }
    ensure!(worst <= 0.0, "entropy exceeds ln(C+1) by {worst:e}");
    Ok(format!(
        "empty pixel ({:.5}, {:.5}); identical-pass entropy {h:.5}; 200 fuzzed frames within ln(C+1)",
        px[0], px[1]
    ))
}

// ----------------------------------------------------------- shift ladders

fn domain_mcdo_scalar(d: &SynthDomain) -> f64 {
    let cfg = &d.scenario.config;
    let scalars: Vec<f64> = d
        .scenario
        .frames
        .iter()
        .map(|f| {
            let passes = f.passes.iter().map(Vec::as_slice);
            mcdo_map_scalar(&frame_mcdo_map(passes, cfg.height, cfg.width, cfg.classes as usize).unwrap()).unwrap()
        })
        .collect();
    dataset_scalar(&scalars).unwrap()
}

fn ladder_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        frames: 8,
        objects_per_frame: 6,
        passes: 8,
        ..Default::default()
    }
}

fn mcdo_shift_sensitivity() -> Check {
    let knobs = ShiftKnobs {
        levels: vec![0.0, 1.0, 2.0],
        jitter_per_unit: 2.0,
        ..Default::default()
    };
    let mut increasing = 0;
    let mut example = Vec::new();
    for seed in 0..20 {
        let ladder = shift_pair(&ladder_config(seed), &knobs).map_err(|e| e.to_string())?;
        let v: Vec<f64> = ladder.targets.iter().map(domain_mcdo_scalar).collect();
        if v.windows(2).all(|w| w[0] < w[1]) {
            increasing += 1;
        }
        if seed == 0 {
            example = v;
        }
    }
    ensure!(increasing >= 18, "strictly increasing in {increasing}/20 seeds");
    Ok(format!(
        "strictly increasing in {increasing}/20 seeds (seed 0: {:.4} < {:.4} < {:.4} at 0/2/4 px)",
        example[0], example[1], example[2]
    ))
}

fn correlation_pipeline() -> Check {
    let knobs = ShiftKnobs {
        levels: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        jitter_per_unit: 1.0,
        feature_offset_per_unit: 0.25,
        ..Default::default()
    };
    let mut lowest: f64 = 1.0;
    for seed in 0..10 {
        let ladder = shift_pair(&ladder_config(seed), &knobs).map_err(|e| e.to_string())?;
        let names: Vec<String> = ladder.targets.iter().map(|t| t.name.clone()).collect();
        let mcdo: Vec<(String, f64)> = names
            .iter()
            .cloned()
            .zip(ladder.targets.iter().map(domain_mcdo_scalar))
            .collect();
        let kl: Vec<(String, f64)> = names
            .iter()
            .cloned()
            .zip(
                ladder
                    .targets
                    .iter()
                    .map(|t| feature_kl(&ladder.source.features, &t.features, 64).unwrap()),
            )
            .collect();
        let m = correlation_matrix(&[
            MetricSeries::new("mcdo_map", mcdo).unwrap(),
            MetricSeries::new("kl", kl).unwrap(),
        ])
        .map_err(|e| e.to_string())?;
        ensure!(m.get(0, 0) == 1.0 && m.get(1, 1) == 1.0, "seed {seed}: diagonal not exactly 1");
        ensure!(m.get(0, 1).to_bits() == m.get(1, 0).to_bits(), "seed {seed}: matrix not symmetric");
        lowest = lowest.min(m.get(0, 1));
    }
    ensure!(lowest > 0.7, "lowest Pearson(mcdo_map, KL) over 10 seeds {lowest:.4}");
    Ok(format!("Pearson(mcdo_map, KL) > 0.7 in 10/10 seeds (lowest {lowest:.4}); symmetric, unit diagonal"))
}

// ---------------------------------------------------------------------- KL

fn random_features(rng: &mut CounterRng, n: usize, shift: f64) -> FeatureVectorSet {
    let values: Vec<f32> = (0..n).map(|_| (shift + rng.normal()) as f32).collect();
    FeatureVectorSet::new("d", 1, values, (0..n).map(|i| i.to_string()).collect()).unwrap()
}

fn kl_properties() -> Check {
    let mut rng = CounterRng::new(5, 0x1c1);
    let a = random_features(&mut rng, 500, 0.0);
    let h = histogram(&a, 32, None).map_err(|e| e.to_string())?;
    let same = kl_divergence(&h, &h).map_err(|e| e.to_string())?;
    ensure!(same.abs() <= 1e-12, "KL(P||P) = {same}");
    let mut min_kl = f64::INFINITY;
    for _ in 0..100 {
        let n1 = rng.int_in(1, 300) as usize;
        let n2 = rng.int_in(1, 300) as usize;
        let shift = rng.uniform_in(-2.0, 2.0);
        let p = random_features(&mut rng, n1, 0.0);
        let q = random_features(&mut rng, n2, shift);
        let bins = rng.int_in(2, 64) as usize;
        let kl = feature_kl(&p, &q, bins).map_err(|e| e.to_string())?;
        ensure!(kl >= 0.0 && kl.is_finite(), "fuzzed pair gave {kl}");
        min_kl = min_kl.min(kl);
    }
    let e = vec![0.0, 0.5, 1.0];
    let p = Histogram::from_probs(e.clone(), vec![0.5, 0.5]).unwrap();
    let q = Histogram::from_probs(e, vec![0.25, 0.75]).unwrap();
    let kl = kl_divergence(&p, &q).map_err(|e| e.to_string())?;
    ensure!((kl - 0.14384).abs() < 1e-5, "analytic case {kl}");
    Ok(format!("KL(P||P) = {same}; 100 fuzzed pairs >= 0 (min {min_kl:.2e}); analytic {kl:.5}"))
}

// -------------------------------------------------------------- background

fn background_partitioning() -> Check {
    let base = ScenarioConfig {
        seed: 11,
        frames: 40,
        objects_per_frame: 6,
        passes: 1,
        sigma_pos: 1.0,
        score_spread: 0.6,
        fp_rate: 0.3,
        ..Default::default()
    };
    let tree_miss = ScenarioConfig {
        miss_rate: [0.0, 1.0, 0.0],
        ..base.clone()
    };
    let report = |cfg: &ScenarioConfig| {
        let s = generate(cfg).unwrap();
        let frames: Vec<EvalFrame> = s
            .frames
            .iter()
            .map(|f| EvalFrame {
                dets: &f.passes[0],
                gts: &f.gts,
                seg: Some(&s.segmap),
            })
            .collect();
        (bg_report(&frames, 0.5, MetricSelection::default(), &DeceConfig::default(), false).unwrap(), s)
    };
    let (full, _) = report(&base);
    let (missed, scenario) = report(&tree_miss);
    ensure!(missed.ap.tree == Some(0.0), "tree AP with all tree objects missed: {:?}", missed.ap.tree);
    for (name, a, b) in [("sky", full.ap.sky, missed.ap.sky), ("ground", full.ap.ground, missed.ap.ground)] {
        let (a, b) = (a.ok_or("undefined AP")?, b.ok_or("undefined AP")?);
        ensure!((a - b).abs() <= 1e-12, "{name} AP moved from {a} to {b}");
    }
    let (mut n_det, mut n_gt) = (0, 0);
    for f in &scenario.frames {
        let p = split_by_bg(&f.passes[0], &f.gts, &scenario.segmap).map_err(|e| e.to_string())?;
        let mut seen_d = vec![0; f.passes[0].len()];
        let mut seen_g = vec![0; f.gts.len()];
        for k in 0..3 {
            p.dets[k].iter().for_each(|&i| seen_d[i] += 1);
            p.gts[k].iter().for_each(|&i| seen_g[i] += 1);
        }
        ensure!(seen_d.iter().chain(&seen_g).all(|&c| c == 1), "{}: a box is not in exactly one partition", f.frame_id);
        n_det += seen_d.len();
        n_gt += seen_g.len();
    }
    let sky = missed.ap.sky.unwrap();
    ensure!(sky > 0.5, "sky AP {sky} is not high");
    Ok(format!(
        "tree AP 0 under tree misses; sky {sky:.4} and ground {:.4} unchanged; {n_det} detections and {n_gt} GT each in exactly one partition",
        missed.ap.ground.unwrap()
    ))
}

// ---------------------------------------------------------------- MCDO-NMS

fn mcdo_nms() -> Check {
    let mut rng = CounterRng::new(21, 0x4e5);
    let base: Vec<Detection> = (0..8)
        .map(|_| {
            let (x, y) = (rng.uniform_in(0.0, 80.0), rng.uniform_in(0.0, 80.0));
            Detection::new(bx(x, y, x + 12.0, y + 9.0), rng.int_in(0, 1) as u32, rng.uniform())
        })
        .collect();
    let same = associate_passes(&vec![base.clone(); 5], 0.5).map_err(|e| e.to_string())?;
    ensure!(
        same.iter().all(|l| list_uncertainty(l).sigma_b == 0.0),
        "identical passes leave nonzero sigma_b"
    );

    let hand = associate_passes(
        &[
            vec![Detection::new(bx(0., 0., 10., 9.), 0, 0.9)],
            vec![Detection::new(bx(0., 0., 10., 11.), 0, 0.9)],
        ],
        0.5,
    )
    .map_err(|e| e.to_string())?;
    ensure!(hand.len() == 1, "hand case formed {} lists", hand.len());
    let sigma = list_uncertainty(&hand[0]).sigma_b;
    ensure!((sigma - 1.0).abs() <= 1e-12, "hand case sigma_b {sigma}");

    let mut members = 0;
    for _ in 0..200 {
        let passes: Vec<Vec<Detection>> = (0..rng.int_in(2, 6))
            .map(|_| {
                (0..rng.int_in(0, 7))
                    .map(|_| {
                        let (x, y) = (rng.uniform_in(0.0, 30.0), rng.uniform_in(0.0, 30.0));
                        let b = bx(x, y, x + rng.uniform_in(1.0, 12.0), y + rng.uniform_in(1.0, 12.0));
                        Detection::new(b, rng.int_in(0, 2) as u32, rng.uniform())
                    })
                    .collect()
            })
            .collect();
        let lists = associate_passes(&passes, 0.5).map_err(|e| e.to_string())?;
        let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for l in &lists {
            for m in &l.members {
                *seen.entry((m.pass, m.index)).or_default() += 1;
            }
        }
        let expected: usize = passes.iter().map(Vec::len).sum();
        ensure!(seen.len() == expected && seen.values().all(|&c| c == 1), "membership is not a partition");
        members += expected;
    }
    Ok(format!(
        "identical passes give sigma_b 0 in {} lists; hand case sigma_b = {sigma}; {members} fuzzed detections each in one list",
        same.len()
    ))
}

// --------------------------------------------------------------------- UDA

fn uda_simulation() -> Check {
    let mut rng = CounterRng::new(8, 0x9c);
    let mut worst_grad: f64 = 0.0;
    for _ in 0..5 {
        let dim = 36;
        let mut feats = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..dim).map(|_| rng.uniform()).collect()).collect() };
        let (src, tgt) = (feats(10), feats(10));
        let d = ToyDiscriminator {
            weights: (0..dim).map(|_| 0.3 * rng.normal()).collect(),
            bias: rng.normal(),
        };
        worst_grad = worst_grad.max(gradient_check(&d, &src, &tgt, 1e-5).map_err(|e| e.to_string())?);
    }
    ensure!(worst_grad < 1e-5, "gradient relative error {worst_grad:e}");

    let cfg = |seed| TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut slowest = 0;
    let mut mean_acc = vec![0.0; levels.len()];
    let mut per_seed_monotone = 0;
    for seed in 0..10 {
        let src = fixture_maps(seed, 0, 10, 16, 16, 1.0).unwrap();
        let tgt = fixture_maps(seed, 1, 10, 16, 16, 0.0).unwrap();
        let r = train_discriminator(&src, &tgt, &cfg(seed)).map_err(|e| e.to_string())?;
        let reached = r.accuracy.iter().position(|&a| a >= 0.95).map(|k| k + 1);
        ensure!(
            reached.is_some() && r.final_accuracy() >= 0.95,
            "seed {seed}: separable fixture reached {:.3}",
            r.final_accuracy()
        );
        slowest = slowest.max(reached.unwrap());

        let accs: Vec<f64> = levels
            .iter()
            .map(|&t| {
                let moved: Vec<_> = tgt.iter().zip(&src).map(|(b, a)| interpolate_maps(b, a, t).unwrap()).collect();
                train_discriminator(&src, &moved, &cfg(seed)).unwrap().final_accuracy()
            })
            .collect();
        if accs.windows(2).all(|w| w[1] <= w[0]) {
            per_seed_monotone += 1;
        }
        for (m, a) in mean_acc.iter_mut().zip(&accs) {
            *m += a / 10.0;
        }
    }
    ensure!(
        mean_acc.windows(2).all(|w| w[1] <= w[0]),
        "seed-ensemble accuracy along the interpolation ladder {mean_acc:?}"
    );
    let half = adv_loss(&[0.5; 10], &[0.5; 10]).map_err(|e| e.to_string())?;
    ensure!((half - 2.0 * 2f64.ln()).abs() <= 1e-9, "adv_loss at 0.5 = {half}");
    Ok(format!(
        "gradient rel err {worst_grad:.1e}; separable >= 0.95 by step {slowest} in 10/10 seeds; ensemble accuracy {} (monotone per seed in {per_seed_monotone}/10); adv_loss(0.5) = {half:.5}",
        mean_acc.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" -> ")
    ))
}

// ------------------------------------------------- determinism, throughput

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_driftbench"));
    c.env_remove("DRIFTBENCH_THREADS");
    c
}

fn run_ok(mut c: Command) -> Result<String, String> {
    let out = c.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{c:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// All files under `dir` with their bytes; manifests lose the fields that
/// legitimately differ between runs.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = fs::read(&p).unwrap();
            if p.to_string_lossy().ends_with("manifest.json") {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .filter(|l| !l.contains("\"wall_time_s\"") && !l.contains("\"threads\""))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

fn pipeline(work: &Path, threads: usize) -> Result<(), String> {
    let t = threads.to_string();
    let cmd = |args: &[&str]| {
        let mut c = bin();
        c.current_dir(work).args(args).args(["--threads", &t]);
        c
    };
    run_ok(cmd(&[
        "synthgen", "--out", "fixture", "--frames", "24", "--passes", "4", "--sigma-pos", "1.5",
        "--fp-rate", "0.3", "--score-spread", "0.5", "--sigma-score", "0.05", "--classes", "2",
    ]))?;
    run_ok(cmd(&["synthgen", "--out", "ladder", "--frames", "4", "--levels", "0,1,2"]))?;
    // relative paths keep the manifests comparable across work directories
    let (dets, gt) = ("fixture/detections.jsonl", "fixture/gt.jsonl");
    run_ok(cmd(&["eval", "--dets", dets, "--gt", gt, "--seg", "fixture/segmaps", "--out", "eval.csv"]))?;
    run_ok(cmd(&["dece", "--dets", dets, "--gt", gt, "--width", "128", "--height", "96", "--out", "cells.csv"]))?;
    run_ok(cmd(&["mcdo-map", "--dets", dets, "--width", "128", "--height", "96", "--classes", "2", "--out", "maps", "--dump-maps"]))?;
    run_ok(cmd(&["mcdo-nms", "--dets", dets, "--gt", gt, "--out", "nms.csv"]))?;
    let kl = run_ok(cmd(&[
        "klcorr", "--features-src", "ladder/source.fvec", "--features-tgt", "ladder/target2.fvec", "--out", "kl.json",
    ]))?;
    fs::write(work.join("kl.txt"), kl).map_err(|e| e.to_string())?;
    run_ok(cmd(&["uda-sim", "--out", "uda", "--steps", "100"]))?;
    fs::write(work.join("series.csv"), "domain,a,b,c\nx,1,2,5\ny,2,4,1\nz,3,7,4\n").map_err(|e| e.to_string())?;
    run_ok(cmd(&["report", "--series", "series.csv", "--reference", "x", "--out", "corr.csv"]))?;
    Ok(())
}

fn determinism_and_throughput() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snaps = Vec::new();
    for (k, threads) in [1, 2, 4, 1].into_iter().enumerate() {
        let work = root.path().join(format!("run{k}"));
        fs::create_dir_all(&work).map_err(|e| e.to_string())?;
        pipeline(&work, threads)?;
        snaps.push((threads, snapshot(&work)));
    }
    let (_, reference) = &snaps[0];
    for (threads, s) in &snaps[1..] {
        ensure!(s.keys().eq(reference.keys()), "file sets differ at {threads} threads");
        for (p, bytes) in s {
            ensure!(&reference[p] == bytes, "{} differs at {threads} threads", p.display());
        }
    }
    let files = reference.len();

    // throughput corpus: one pass, about 1.02 million detections
    let big = root.path().join("big");
    let mut gen = bin();
    gen.args(["synthgen", "--out"]).arg(&big).args([
        "--frames", "10000", "--objects", "85", "--fp-rate", "0.2", "--passes", "1", "--sigma-pos", "1",
        "--score-spread", "0.6",
    ]);
    run_ok(gen)?;
    let dets = big.join("detections.jsonl");
    let n_dets = driftbench::formats::read_detections(&dets)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|r| r.detections.len())
        .sum::<usize>();
    ensure!(n_dets >= 1_000_000, "corpus has only {n_dets} detections");
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let threads = cores.min(4);
    let start = Instant::now();
    let mut eval = bin();
    eval.arg("eval")
        .arg("--dets")
        .arg(&dets)
        .arg("--gt")
        .arg(big.join("gt.jsonl"))
        .arg("--seg")
        .arg(big.join("segmaps"))
        .arg("--out")
        .arg(root.path().join("big.csv"))
        .args(["--metrics", "ap", "--threads", &threads.to_string()]);
    run_ok(eval)?;
    let secs = start.elapsed().as_secs_f64();
    let rate = n_dets as f64 / secs;
    ensure!(
        rate >= 50_000.0 && secs < 30.0,
        "{n_dets} detections in {secs:.2} s = {rate:.0}/s on {threads} threads"
    );
    Ok(format!(
        "{files} output files byte-identical at 1/2/4 threads and on rerun; eval {n_dets} detections in {secs:.2} s = {:.0}k/s on {threads} thread(s) of {cores} core(s)",
        rate / 1e3
    ))
}

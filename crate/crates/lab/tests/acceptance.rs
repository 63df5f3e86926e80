//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line with its
//! measurement and wall time; the target exits non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ngen_core::activations::{BaseActivation, Granularity};
use ngen_core::instrumentation::{grad_check, sandwich_check, variance_bounds};
use ngen_core::network::{build_mlp, ActivationSpec, InitKind, InitScheme, Network, NgSpec};
use ngen_core::Tensor;
use ngen_lab::cifar::{self, Records, IMAGE_BYTES, RECORD_BYTES};
use ngen_lab::config::{ExperimentConfig, RawConfig};
use ngen_lab::experiments::{run_experiment, Summary};
use ngen_lab::output::WriteMode;
use ngen_lab::LabError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Report {
    lines: Vec<String>,
    failed: usize,
}

impl Report {
    fn check(&mut self, id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= limit => (true, d),
            Ok(d) => (false, format!("{d}; over time limit")),
            Err(d) => (false, d),
        };
        let line = format!(
            "{} [{id}] {name}: {detail} ({:.1}s of {}s)",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        println!("{line}");
        self.failed += usize::from(!ok);
        self.lines.push(line);
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::from_raw(&RawConfig::load(&path).unwrap()).unwrap()
}

fn run(cfg: &ExperimentConfig) -> Result<(Summary, tempfile::TempDir), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = run_experiment(cfg, dir.path(), WriteMode::Create, "").map_err(|e| e.to_string())?;
    Ok((summary, dir))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn gradient_exactness() -> Outcome {
    let act = ActivationSpec::ng(
        BaseActivation::Relu,
        NgSpec { t_init: -0.1, granularity: Granularity::ChannelWise, trainable: true },
    );
    let net = Network::new(build_mlp(6, &[12, 12, 12], 4, false, act).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut params = net.init_params(InitScheme::new(InitKind::Xavier, 1));
    let count = params.num_trainable();
    if count > 2000 {
        return Err(format!("{count} parameters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // spread the kinks into the data
    for layer in &mut params.layers {
        if let Some(ng) = layer.ng_mut() {
            ng.t.data_mut().iter_mut().for_each(|t| *t = rng.random_range(-0.3..0.1));
        }
    }
    let x = uniform(&mut rng, &[8, 6]);
    let y: Vec<usize> = (0..8).map(|i| i % 4).collect();
    let report = grad_check(&net, &params, &x, &y, 1e-4).map_err(|e| e.to_string())?;
    let groups: Vec<String> = report
        .groups
        .iter()
        .map(|(name, g)| format!("{name} {:.1e} ({} checked, {} near kinks)", g.max_rel_error, g.checked, g.excluded))
        .collect();
    let detail = format!("{count} params; {}", groups.join(", "));
    let t_checked = report.groups.get("ng_t").is_some_and(|g| g.checked > 0);
    if report.max_rel_error() < 1e-4 && t_checked {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn linearity_at_init() -> Outcome {
    let build = |act| Network::new(build_mlp(6, &[16, 16, 16], 5, false, act).unwrap()).unwrap();
    let ng = build(ActivationSpec::ng(
        BaseActivation::Relu,
        NgSpec { t_init: -1e3, granularity: Granularity::ChannelWise, trainable: true },
    ));
    let twin = build(ActivationSpec::identity());
    let scheme = InitScheme::new(InitKind::Msra, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = uniform(&mut rng, &[64, 6]);
    let a = ng.predict(&ng.init_params(scheme), &x).map_err(|e| e.to_string())?;
    let b = twin.predict(&twin.init_params(scheme), &x).map_err(|e| e.to_string())?;
    let worst = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    let detail = format!("max |logit difference| {worst:.2e} over {} logits", a.data().len());
    if worst < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Variance of `ΔW_ij = −lr·g_i·z_j` by direct two-pass summation.
fn outer_product_variance(z: &[f64], g: &[f64], lr: f64) -> f64 {
    let dw: Vec<f64> = g.iter().flat_map(|gi| z.iter().map(move |zj| -lr * gi * zj)).collect();
    let n = dw.len() as f64;
    let m = dw.iter().sum::<f64>() / n;
    dw.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / n
}

fn variance_sandwich() -> Outcome {
    const SLACK: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut updates = 0;
    let mut tightest = f64::INFINITY;
    while updates < 1000 {
        let input = rng.random_range(1..=32);
        let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=32)).collect();
        let classes = rng.random_range(2..=10);
        let act = if rng.random_bool(0.5) {
            ActivationSpec::ng(BaseActivation::Relu, NgSpec { t_init: rng.random_range(-1.0..0.0), ..NgSpec::default() })
        } else {
            ActivationSpec::relu()
        };
        let net = Network::new(build_mlp(input, &hidden, classes, false, act).unwrap()).unwrap();
        let params = net.init_params(InitScheme::new(InitKind::Msra, rng.random()));
        let x = uniform(&mut rng, &[1, input]);
        let label = rng.random_range(0..classes);
        let lr = 10f64.powf(rng.random_range(-4.0..0.0));
        let report = sandwich_check(&net, &params, &x, label, lr, updates).map_err(|e| format!("update {updates}: {e}"))?;
        for s in report.dense {
            let lower = lr * lr * s.mean_g * s.mean_g * s.var_z;
            let upper = 2.0 * lr * lr * (s.var_g * s.mean_z * s.mean_z + s.var_z * s.var_g + s.var_z * s.mean_g * s.mean_g);
            if lower > s.var_dw * (1.0 + SLACK) || s.var_dw > upper * (1.0 + SLACK) {
                return Err(format!("update {updates}: {lower} <= {} <= {upper} fails", s.var_dw));
            }
            if s.var_dw > 0.0 {
                tightest = tightest.min(upper / s.var_dw);
            }
            updates += 1;
        }
    }

    let mut worst_gap: f64 = 0.0;
    for _ in 0..200 {
        let z: Vec<f64> = (0..rng.random_range(2..=32)).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = vec![rng.random_range(-3.0..3.0); rng.random_range(1..=32)];
        let lr = rng.random_range(1e-3..1.0);
        let var_dw = outer_product_variance(&z, &g, lr);
        let b = variance_bounds(&z, &g, lr).map_err(|e| e.to_string())?;
        worst_gap = worst_gap.max((b.lower - var_dw).abs() / var_dw);
    }
    let detail = format!(
        "{updates} network updates inside bounds (min upper/var {tightest:.3}); constant-g lower bound gap {worst_gap:.1e}"
    );
    if worst_gap <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn capacity_trend() -> Outcome {
    let (summary, _dir) = run(&config("capacity.cfg"))?;
    let Summary::Capacity(rows) = summary else { return Err("wrong summary".into()) };
    let fixed: Vec<_> = rows.iter().filter(|r| !r.trainable && r.t_init.is_some()).collect();
    let trainable = rows.iter().find(|r| r.trainable).ok_or("no trainable run")?;
    let accs: Vec<f64> = fixed.iter().map(|r| r.max_train_acc).collect();
    let drops: Vec<f64> = accs.windows(2).filter(|w| w[1] < w[0]).map(|w| w[0] - w[1]).collect();
    let trend_ok = drops.is_empty() || (drops.len() == 1 && drops[0] <= 0.01 + 1e-12);
    let t = trainable.final_t_mean.ok_or("no shift recorded")?;
    let listing: Vec<String> = fixed.iter().map(|r| format!("{}={:.3}", r.setting, r.max_train_acc)).collect();
    let identity = rows.iter().find(|r| r.t_init.is_none()).map_or(f64::NAN, |r| r.max_train_acc);
    let detail = format!(
        "identity={identity:.3} {}; trainable max acc {:.3}, final mean t {t:.4}",
        listing.join(" "),
        trainable.max_train_acc
    );
    if accs.len() == 4 && trend_ok && t > -1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn critical_depth() -> Outcome {
    let (summary, _dir) = run(&config("critical_depth.cfg"))?;
    let Summary::CriticalDepth(ladders) = summary else { return Err("wrong summary".into()) };
    let find = |v: &str| ladders.iter().find(|l| l.variant == v).and_then(|l| l.critical_depth);
    let (plain, ng) = (find("relu"), find("ng_relu"));
    let detail = format!("relu {plain:?}, ng_relu {ng:?} (ladder step 6)");
    match (plain, ng) {
        (p, Some(n)) if n >= p.unwrap_or(0) + 6 => Ok(detail),
        _ => Err(detail),
    }
}

fn init_robustness() -> Outcome {
    let (summary, _dir) = run(&config("learning_behavior.cfg"))?;
    let Summary::LearningBehavior(grids) = summary else { return Err("wrong summary".into()) };
    let spread = |v: &str| grids.iter().find(|g| g.variant == v).map(|g| g.spread());
    let describe = |v: &str| {
        grids
            .iter()
            .find(|g| g.variant == v)
            .map(|g| g.cells.iter().map(|c| c.epochs_to_threshold.to_string()).collect::<Vec<_>>().join("/"))
            .unwrap_or_default()
    };
    let (plain, ng) = (spread("relu"), spread("ng_relu"));
    let detail = format!(
        "epochs to threshold xavier/msra/orthogonal: relu {} (spread {plain:?}), ng_relu {} (spread {ng:?})",
        describe("relu"),
        describe("ng_relu")
    );
    match (plain, ng) {
        (Some(p), Some(n)) if n < p => Ok(detail),
        _ => Err(detail),
    }
}

fn variance_stability() -> Outcome {
    let cfg = config("variance_study.cfg");
    let (summary, _dir) = run(&cfg)?;
    let Summary::VarianceStudy(rows) = summary else { return Err("wrong summary".into()) };
    let find = |v: &str| rows.iter().find(|r| r.variant == v);
    let (Some(plain), Some(ng)) = (find("relu"), find("ng_relu")) else { return Err("missing variant".into()) };
    let detail = format!(
        "{} dense layers; stability relu {:.4}, ng_relu {:.4} at step {}; sandwich {}/{} and {}/{}",
        plain.layer_variances.len(),
        plain.stability_score,
        ng.stability_score,
        ng.step,
        plain.sandwich_holds,
        plain.sandwich_probes,
        ng.sandwich_holds,
        ng.sandwich_probes,
    );
    if plain.layer_variances.len() == 10 && plain.step == ng.step && ng.stability_score < plain.stability_score {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (PathBuf::from(p.file_name().unwrap()), bytes)
        })
        .collect();
    out.sort();
    out
}

fn determinism_and_formats() -> Outcome {
    let mut raw = RawConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/variance_study.cfg"))
        .map_err(|e| e.to_string())?;
    raw.set("epochs", 3);
    raw.set("sweep.probe_every", 10);
    let cfg = ExperimentConfig::from_raw(&raw).map_err(|e| e.to_string())?;
    let (_, a) = run(&cfg)?;
    let (_, b) = run(&cfg)?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    if fa != fb || fa.len() != 4 {
        return Err(format!("{} vs {} files, contents equal: {}", fa.len(), fb.len(), fa == fb));
    }
    let bytes: usize = fa.iter().map(|(_, b)| b.len()).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 50;
    let records = Records {
        labels: (0..n).map(|_| rng.random_range(0..10)).collect(),
        pixels: (0..n * IMAGE_BYTES).map(|_| rng.random()).collect(),
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("batch.bin");
    cifar::write_records(&path, &records).map_err(|e| e.to_string())?;
    let back = cifar::read_records(&path).map_err(|e| e.to_string())?;
    if back.labels != records.labels || back.pixels != records.pixels {
        return Err("CIFAR round trip changed records".into());
    }
    let bad = cifar::decode(&path, &vec![0u8; RECORD_BYTES * 2 - 1]);
    if !matches!(bad, Err(LabError::Format { .. })) {
        return Err("truncated CIFAR input was accepted".into());
    }
    Ok(format!("4 CSV files ({bytes} bytes) identical across runs; {n} CIFAR records round-trip; short input rejected"))
}

fn main() {
    let mut report = Report { lines: Vec::new(), failed: 0 };
    let secs = Duration::from_secs;
    report.check(1, "gradient exactness", secs(30), gradient_exactness);
    report.check(2, "linearity at init", secs(5), linearity_at_init);
    report.check(3, "variance sandwich", secs(10), variance_sandwich);
    report.check(4, "capacity trend", secs(600), capacity_trend);
    report.check(5, "critical depth direction", secs(1200), critical_depth);
    report.check(6, "initialization robustness", secs(900), init_robustness);
    report.check(7, "variance stability", secs(600), variance_stability);
    report.check(8, "determinism and formats", secs(60), determinism_and_formats);
    println!("{} of {} criteria passed", report.lines.len() - report.failed, report.lines.len());
    if report.failed > 0 {
        std::process::exit(1);
    }
}

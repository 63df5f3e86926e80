use std::path::Path;

use ngen_core::instrumentation::{weight_variance_trace, LayerStats, TTrace};
use ngen_core::network::{ActivationSpec, InitKind, InitScheme, Network, NgSpec};

use crate::config::{base_name, init_name, ExperimentConfig, ExperimentKind};
use crate::data::{self, Splits};
use crate::error::{io_err, Result};
use crate::output::{self, CsvTable, Field, Schema, WriteMode};
use crate::train::{train, MetricsRow, RunOutcome, RunSpec};

/// Stream offset separating the shuffling seed from the init seed.
const SHUFFLE_STREAM: u64 = 0x5eed_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult {
    pub run_id: String,
    pub setting: String,
    pub t_init: Option<f64>,
    pub trainable: bool,
    pub max_train_acc: f64,
    pub final_t_mean: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderStep {
    pub run_id: String,
    pub depth: usize,
    pub final_train_acc: f64,
    pub converged: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    pub variant: String,
    pub steps: Vec<LadderStep>,
    /// Last depth before the first non-converging one.
    pub critical_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitCell {
    pub run_id: String,
    pub init: InitKind,
    pub epochs_to_threshold: usize,
    pub threshold: f64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitGrid {
    pub variant: String,
    pub cells: Vec<InitCell>,
}

impl InitGrid {
    /// Max minus min epochs-to-threshold across inits.
    pub fn spread(&self) -> usize {
        let e = self.cells.iter().map(|c| c.epochs_to_threshold);
        e.clone().max().unwrap_or(0) - e.min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceResult {
    pub run_id: String,
    pub variant: String,
    pub step: usize,
    pub stability_score: f64,
    pub layer_variances: Vec<(usize, f64)>,
    pub sandwich_probes: usize,
    pub sandwich_holds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Summary {
    Single { run_id: String, converged: bool, final_train_acc: f64, final_test_acc: f64 },
    Capacity(Vec<CapacityResult>),
    CriticalDepth(Vec<Ladder>),
    LearningBehavior(Vec<InitGrid>),
    VarianceStudy(Vec<VarianceResult>),
}

/// Writers for the per-run tables shared by every experiment kind.
struct RunTables {
    metrics: CsvTable,
    layer_stats: CsvTable,
    t_trace: CsvTable,
}

impl RunTables {
    fn open(dir: &Path, mode: WriteMode) -> Result<Self> {
        Ok(Self {
            metrics: open(dir, output::METRICS, mode)?,
            layer_stats: open(dir, output::LAYER_STATS, mode)?,
            t_trace: open(dir, output::T_TRACE, mode)?,
        })
    }

    fn record(&mut self, run: &RunOutcome) -> Result<()> {
        for m in &run.metrics {
            self.metrics.write(&metrics_fields(m))?;
        }
        let mut stats: Vec<&LayerStats> = run.layer_stats.iter().collect();
        stats.sort_by_key(|s| (s.step, s.layer_index));
        for s in stats {
            self.layer_stats.write(&layer_fields(&run.run_id, s))?;
        }
        for t in &run.t_traces {
            self.t_trace.write(&t_fields(&run.run_id, t))?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        self.metrics.finish()?;
        self.layer_stats.finish()?;
        self.t_trace.finish()
    }
}

fn open(dir: &Path, schema: Schema, mode: WriteMode) -> Result<CsvTable> {
    CsvTable::open(&dir.join(schema.file_name()), schema, mode)
}

fn metrics_fields(m: &MetricsRow) -> Vec<Field> {
    vec![
        m.run_id.clone().into(),
        m.epoch.into(),
        m.step.into(),
        m.train_loss.into(),
        m.train_acc.into(),
        m.test_acc.into(),
        m.lr_multiplier.into(),
        m.diverged.into(),
    ]
}

fn layer_fields(run_id: &str, s: &LayerStats) -> Vec<Field> {
    vec![
        run_id.into(),
        s.step.into(),
        s.layer_index.into(),
        s.mean_z.into(),
        s.var_z.into(),
        s.mean_g.into(),
        s.var_g.into(),
        s.var_dw.into(),
        s.lower_bound.into(),
        s.upper_bound.into(),
        s.weight_var.into(),
    ]
}

fn t_fields(run_id: &str, t: &TTrace) -> Vec<Field> {
    vec![
        run_id.into(),
        t.epoch.into(),
        t.layer_index.into(),
        t.t_mean.into(),
        t.t_std.into(),
        t.t_min.into(),
        t.t_max.into(),
    ]
}

/// Short label such as `relu` or `ng_relu`.
pub fn variant_name(act: &ActivationSpec) -> String {
    match act.ng {
        Some(_) => format!("ng_{}", base_name(&act.base)),
        None => base_name(&act.base).to_string(),
    }
}

/// The plain base activation and its NG-wrapped counterpart.
pub fn paired_variants(act: &ActivationSpec) -> [ActivationSpec; 2] {
    let ng = act.ng.unwrap_or_default();
    [ActivationSpec::plain(act.base), ActivationSpec::ng(act.base, ng)]
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    data: Splits,
    prefix: &'a str,
}

impl Runner<'_> {
    fn run(&self, name: &str, act: ActivationSpec, depth: Option<usize>, init: InitKind, probe_every: usize) -> Result<RunOutcome> {
        let mut model = self.cfg.model.clone();
        if let Some(d) = depth {
            model.depth = d;
        }
        let spec = model.build(self.data.train.sample_shape(), self.cfg.classes(), act)?;
        let net = Network::new(spec)?;
        let run = RunSpec {
            run_id: format!("{}{}:{name}", self.prefix, self.cfg.kind.name()),
            init: InitScheme::new(init, self.cfg.seed),
            optim: self.cfg.optim.clone(),
            epochs: self.cfg.epochs,
            batch_size: self.cfg.batch_size,
            seed: self.cfg.seed ^ SHUFFLE_STREAM,
            augment: self.cfg.data.augment,
            probe_every,
        };
        train(&net, &run, &self.data)
    }
}

/// Runs the configured experiment, writing `metrics.csv`, `layerstats.csv`,
/// `ttrace.csv` and (for the sweeps) a per-kind summary table into `dir`.
/// `prefix` is prepended to every run id.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, mode: WriteMode, prefix: &str) -> Result<Summary> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let data = data::load(&cfg.data, cfg.data_seed())?;
    let runner = Runner { cfg, data, prefix };
    let mut tables = RunTables::open(dir, mode)?;
    let summary = match cfg.kind {
        ExperimentKind::SingleRun => {
            let run = runner.run(&variant_name(&cfg.activation), cfg.activation, None, cfg.init, cfg.sweep.probe_every)?;
            tables.record(&run)?;
            Summary::Single {
                run_id: run.run_id.clone(),
                converged: run.converged(),
                final_train_acc: run.final_train_acc(),
                final_test_acc: run.final_test_acc(),
            }
        }
        ExperimentKind::CapacitySweep => capacity(&runner, &mut tables, dir, mode)?,
        ExperimentKind::CriticalDepth => critical_depth(&runner, &mut tables, dir, mode)?,
        ExperimentKind::LearningBehavior => learning_behavior(&runner, &mut tables, dir, mode)?,
        ExperimentKind::VarianceStudy => variance_study(&runner, &mut tables, dir, mode)?,
    };
    tables.finish()?;
    Ok(summary)
}

fn capacity(r: &Runner, tables: &mut RunTables, dir: &Path, mode: WriteMode) -> Result<Summary> {
    let base = r.cfg.activation.base;
    let ng = r.cfg.activation.ng.unwrap_or_default();
    let mut settings = vec![("identity".to_string(), ActivationSpec::identity(), None, false)];
    for &t in &r.cfg.sweep.t_values {
        let spec = ActivationSpec::ng(base, NgSpec { t_init: t, trainable: false, ..ng });
        settings.push((format!("t={t}"), spec, Some(t), false));
    }
    let trainable = ActivationSpec::ng(base, NgSpec { trainable: true, ..ng });
    settings.push((format!("trainable_t={}", ng.t_init), trainable, Some(ng.t_init), true));

    let mut summary = open(dir, output::CAPACITY, mode)?;
    let mut results = Vec::new();
    for (setting, act, t_init, is_trainable) in settings {
        let run = r.run(&setting, act, None, r.cfg.init, 0)?;
        tables.record(&run)?;
        let res = CapacityResult {
            run_id: run.run_id.clone(),
            setting,
            t_init,
            trainable: is_trainable,
            max_train_acc: run.max_train_acc(),
            final_t_mean: run.final_t_mean(),
            diverged: run.diverged,
        };
        summary.write(&[
            res.run_id.clone().into(),
            res.setting.clone().into(),
            res.t_init.map_or(Field::Str(String::new()), Field::Float),
            res.trainable.into(),
            res.max_train_acc.into(),
            res.final_t_mean.map_or(Field::Str(String::new()), Field::Float),
            res.diverged.into(),
        ])?;
        results.push(res);
    }
    summary.finish()?;
    Ok(Summary::Capacity(results))
}

fn critical_depth(r: &Runner, tables: &mut RunTables, dir: &Path, mode: WriteMode) -> Result<Summary> {
    let mut depths = r.cfg.sweep.depths.clone();
    if depths.is_empty() {
        depths.push(r.cfg.model.depth);
    }
    depths.sort_unstable();
    let mut summary = open(dir, output::CRITICAL_DEPTH, mode)?;
    let mut ladders = Vec::new();
    for act in paired_variants(&r.cfg.activation) {
        let variant = variant_name(&act);
        let mut ladder = Ladder { variant: variant.clone(), steps: Vec::new(), critical_depth: None };
        for &depth in &depths {
            let run = r.run(&format!("{variant}:depth={depth}"), act, Some(depth), r.cfg.init, 0)?;
            tables.record(&run)?;
            let step = LadderStep {
                run_id: run.run_id.clone(),
                depth,
                final_train_acc: run.final_train_acc(),
                converged: run.converged(),
                diverged: run.diverged,
            };
            summary.write(&[
                step.run_id.clone().into(),
                variant.clone().into(),
                depth.into(),
                step.final_train_acc.into(),
                step.converged.into(),
                step.diverged.into(),
            ])?;
            let converged = step.converged;
            ladder.steps.push(step);
            if !converged {
                break;
            }
            ladder.critical_depth = Some(depth);
        }
        ladders.push(ladder);
    }
    summary.finish()?;
    Ok(Summary::CriticalDepth(ladders))
}

fn learning_behavior(r: &Runner, tables: &mut RunTables, dir: &Path, mode: WriteMode) -> Result<Summary> {
    let mut summary = open(dir, output::LEARNING_BEHAVIOR, mode)?;
    let mut grids = Vec::new();
    for act in paired_variants(&r.cfg.activation) {
        let variant = variant_name(&act);
        let mut grid = InitGrid { variant: variant.clone(), cells: Vec::new() };
        for &init in &r.cfg.sweep.inits {
            let run = r.run(&format!("{variant}:{}", init_name(init)), act, None, init, 0)?;
            tables.record(&run)?;
            let cell = InitCell {
                run_id: run.run_id.clone(),
                init,
                epochs_to_threshold: run.epochs_to_threshold(),
                threshold: run.threshold(),
                final_train_acc: run.final_train_acc(),
                final_test_acc: run.final_test_acc(),
            };
            summary.write(&[
                cell.run_id.clone().into(),
                variant.clone().into(),
                init_name(init).into(),
                cell.epochs_to_threshold.into(),
                cell.threshold.into(),
                cell.final_train_acc.into(),
                cell.final_test_acc.into(),
            ])?;
            grid.cells.push(cell);
        }
        grids.push(grid);
    }
    summary.finish()?;
    Ok(Summary::LearningBehavior(grids))
}

fn variance_study(r: &Runner, tables: &mut RunTables, dir: &Path, mode: WriteMode) -> Result<Summary> {
    let mut summary = open(dir, output::VARIANCE_STUDY, mode)?;
    let mut results = Vec::new();
    for act in paired_variants(&r.cfg.activation) {
        let variant = variant_name(&act);
        let run = r.run(&variant, act, None, r.cfg.init, r.cfg.sweep.probe_every)?;
        tables.record(&run)?;
        let trace = weight_variance_trace(&run.params, run.steps);
        let res = VarianceResult {
            run_id: run.run_id.clone(),
            variant: variant.clone(),
            step: run.steps,
            stability_score: trace.stability_score,
            layer_variances: trace.layers,
            sandwich_probes: run.sandwich_probes,
            sandwich_holds: run.sandwich_holds,
        };
        summary.write(&[
            res.run_id.clone().into(),
            variant.into(),
            res.step.into(),
            res.stability_score.into(),
            res.sandwich_probes.into(),
            res.sandwich_holds.into(),
        ])?;
        results.push(res);
    }
    summary.finish()?;
    Ok(Summary::VarianceStudy(results))
}

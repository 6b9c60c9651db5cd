use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use log::info;
use rayon::prelude::*;

use super::config::{manifest, DatasetSpec, RunConfig};
use super::{EvalArgs, QuantiseArgs, RunArgs, SampleArgs, StrategyArgs, SweepArgs, ValuesArg};
use crate::datagen::{
    self, load_grid, synth, write_mel, write_symbol_csv, Example, MelFile, ToyDistribution,
};
use crate::error::{Error, Result};
use crate::metrics::{
    chain_rule_loglik, logf0_rmse, mcd, model_vs_truth, order_spread, paired_t_test,
};
use crate::model::{Checkpoint, Network, Temperatures};
use crate::objective::{exact_elbo, train, write_trace_csv, MAX_EXACT_FRAMES};
use crate::orders::{self, kendall_tau_distance, Direction};
use crate::quantiser::{QuantiserSpec, RealGrid};
use crate::rng::{label, stream};
use crate::sampler::{generate, GenerateOptions, Strategy, StrategyKind, ValueMode};

/// Columns of the per-cell sweep table.
pub const SWEEP_HEADER: &str = "axis_value,repetition,mcd,logf0_rmse,loglik,wall_ms";
const SUMMARY_HEADER: &str =
    "axis_value,n,mcd_mean,mcd_std,logf0_rmse_mean,logf0_rmse_std,loglik_mean,loglik_std,kendall_tau_mean";
/// β values swept by default.
pub const DEFAULT_BETAS: [f64; 7] = [0.001, 0.003, 0.01, 0.03, 0.1, 0.35, 1.0];
const DEFAULT_REPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Beta,
    K,
    Q,
    Strategy,
}

struct Prepared {
    cfg: RunConfig,
    quantiser: QuantiserSpec<f64>,
    train: Vec<Example>,
    test: Vec<Example>,
    toy: Option<ToyDistribution>,
}

fn resolve(run: &RunArgs) -> Result<RunConfig> {
    if !run.config.exists() {
        return Err(Error::Config(format!(
            "config file {} does not exist",
            run.config.display()
        )));
    }
    let (mut cfg, _) = RunConfig::load(&run.config)?;
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(o) = &run.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

/// Build the data a config describes. `quantiser` overrides the configured
/// or fitted one (used when a checkpoint fixes it).
fn prepare(mut cfg: RunConfig, quantiser: Option<QuantiserSpec<f64>>) -> Result<Prepared> {
    let seed = cfg.seed;
    let fit = |grids: &[&RealGrid<f64>], levels| -> Result<QuantiserSpec<f64>> {
        match (quantiser, cfg.bounds) {
            (Some(q), _) => Ok(q),
            (None, Some((a, b))) => QuantiserSpec::new(a, b, levels),
            (None, None) => QuantiserSpec::fit(grids.iter().copied(), levels),
        }
    };
    let p = match &cfg.dataset.spec {
        DatasetSpec::Toy(d) => {
            let train = datagen::sample_dataset(
                d,
                cfg.dataset.train_count,
                &mut stream(seed, &[label("train-data")]),
            )?;
            let test = datagen::sample_dataset(
                d,
                cfg.dataset.test_count,
                &mut stream(seed, &[label("test-data")]),
            )?;
            Prepared {
                quantiser: fit(&[], cfg.levels)?,
                toy: Some(d.clone()),
                cfg: cfg.clone(),
                train,
                test,
            }
        }
        DatasetSpec::Synth(s) => {
            let tr = datagen::synth_utterances(
                s,
                cfg.dataset.train_count,
                &mut stream(seed, &[label("train-data")]),
            )?;
            let te = datagen::synth_utterances(
                s,
                cfg.dataset.test_count,
                &mut stream(seed, &[label("test-data")]),
            )?;
            let grids: Vec<&RealGrid<f64>> = tr.iter().map(|u| &u.log_mel).collect();
            let q = fit(&grids, cfg.levels)?;
            Prepared {
                train: datagen::utterance_examples(&tr, &q),
                test: datagen::utterance_examples(&te, &q),
                quantiser: q,
                toy: None,
                cfg: cfg.clone(),
            }
        }
        DatasetSpec::Mel(paths) => {
            let grids = paths
                .iter()
                .map(|p| {
                    load_grid(p)
                        .map(|m| m.grid)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            let bins = grids[0].bins();
            if grids.iter().any(|g| g.bins() != bins) {
                return Err(Error::Config(
                    "mel files disagree on the number of bins".into(),
                ));
            }
            cfg.network.bins = bins;
            cfg.network.validate()?;
            let refs: Vec<&RealGrid<f64>> = grids.iter().collect();
            let q = fit(&refs, cfg.levels)?;
            let examples = datagen::mel_examples(&grids, &q);
            let test = examples
                .iter()
                .take(cfg.dataset.test_count)
                .cloned()
                .collect();
            Prepared {
                train: examples,
                test,
                quantiser: q,
                toy: None,
                cfg,
            }
        }
    };
    Ok(p)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn load_checkpoint(path: &Option<PathBuf>, cfg: &RunConfig) -> Result<Checkpoint> {
    let path = path
        .clone()
        .unwrap_or_else(|| cfg.out.join("checkpoint.bin"));
    if !path.exists() {
        return Err(Error::Config(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Checkpoint::load(&path)
}

/// Load the checkpoint and rebuild the data with its quantiser.
fn prepare_with_checkpoint(
    run: &RunArgs,
    checkpoint: &Option<PathBuf>,
) -> Result<(Prepared, Network)> {
    let cfg = resolve(run)?;
    let ck = load_checkpoint(checkpoint, &cfg)?;
    let p = prepare(cfg, Some(*ck.network.quantiser()))?;
    let nc = ck.network.config();
    let bins = p.test[0].symbols.bins();
    if nc.bins != bins || nc.levels != p.cfg.levels {
        return Err(Error::Config(format!(
            "checkpoint expects {} bins × {} levels, data has {} bins × {} levels",
            nc.bins, nc.levels, bins, p.cfg.levels
        )));
    }
    Ok((p, ck.network))
}

fn resolve_strategy(cfg: &RunConfig, a: &StrategyArgs) -> Result<Strategy> {
    let mut name = match (&a.strategy, a.beta, a.k) {
        (Some(s), _, _) => s.clone(),
        (None, Some(_), _) => "beta".into(),
        (None, None, Some(_)) => "topk".into(),
        _ => cfg.sampling.strategy.clone(),
    };
    if !name.contains(':') {
        match name.as_str() {
            "beta" => {
                let b = a
                    .beta
                    .ok_or_else(|| Error::Config("strategy `beta` needs --beta".into()))?;
                name = format!("beta:{b}");
            }
            "topk" | "topk*" => {
                let k =
                    a.k.ok_or_else(|| Error::Config(format!("strategy `{name}` needs --k")))?;
                name = format!("{name}:{k}");
            }
            _ => {}
        }
    }
    let mut s: Strategy = name.parse()?;
    if let StrategyKind::Beta { log, .. } = &mut s.kind {
        *log = cfg.sampling.swap_log;
    }
    let mut temps = cfg.sampling.temperatures;
    if let Some(t1) = a.t1 {
        temps.t1 = t1;
    }
    if let Some(t2) = a.t2 {
        temps.t2 = t2;
    }
    let placement = temps.placement;
    let temps = Temperatures {
        placement,
        ..Temperatures::new(temps.t1, temps.t2).map_err(|e| Error::Config(e.to_string()))?
    };
    match a.values {
        Some(ValuesArg::Argmax) => s.values = ValueMode::Argmax,
        Some(ValuesArg::Sample) => s.values = ValueMode::Sample(temps),
        None => {}
    }
    Ok(s.with_temperatures(temps))
}

fn command_line(name: &str, extra: &[(&str, String)]) -> String {
    let mut s = name.to_string();
    for (k, v) in extra {
        s.push_str(&format!(" --{k} {v}"));
    }
    s
}

pub fn cmd_train(args: &RunArgs) -> Result<()> {
    let p = prepare(resolve(args)?, None)?;
    let cfg = &p.cfg;
    create_out(&cfg.out)?;
    let net = Network::init(
        cfg.network,
        p.quantiser,
        &mut stream(cfg.seed, &[label("init")]),
    )?;
    info!(
        "training {} parameters on {} sequences for {} steps",
        net.params().count(),
        p.train.len(),
        cfg.train.steps
    );
    let (net, trace) = train(
        net,
        &p.train,
        &cfg.train,
        &mut stream(cfg.seed, &[label("train")]),
    )?;
    let ck = Checkpoint {
        network: net,
        seed: cfg.seed,
    };
    ck.save(cfg.out.join("checkpoint.bin"))?;
    write_trace_csv(
        BufWriter::new(File::create(cfg.out.join("loss_trace.csv"))?),
        &trace,
    )?;
    write_text(cfg.out.join("manifest.ini"), &manifest(cfg, "train"))?;
    if let Some(last) = trace.last() {
        println!(
            "trained {} steps; final minibatch loss {:.4}",
            trace.len(),
            last.loss
        );
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

pub fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let (p, net) = prepare_with_checkpoint(&args.run, &args.checkpoint)?;
    let cfg = &p.cfg;
    let strategy = resolve_strategy(cfg, &args.strategy)?;
    let count = args.count.unwrap_or(cfg.sampling.count);
    create_out(&cfg.out)?;
    let q = *net.quantiser();
    let mut orders_csv = String::from("index,strategy,forward_calls,order\n");
    for i in 0..count {
        let ex = &p.test[i % p.test.len()];
        let opts = GenerateOptions {
            record_steps: args.dump_steps,
            segments: ex.segments.clone(),
        };
        let g = generate(
            &net,
            &ex.mu,
            &strategy,
            &opts,
            &mut stream(cfg.seed, &[label("sample"), i as u64]),
        )?;
        write_mel(
            cfg.out.join(format!("sample_{i:03}.mel")),
            &mel_of(&q, &g.grid)?,
        )?;
        orders_csv.push_str(&format!(
            "{i},{strategy},{},{}\n",
            g.forward_calls,
            g.order.to_csv_field()
        ));
        let mut lines = g.json_lines(&strategy).join("\n");
        lines.push('\n');
        write_text(cfg.out.join(format!("steps_{i:03}.jsonl")), &lines)?;
        if args.dump_steps {
            let dir = cfg.out.join(format!("steps_{i:03}"));
            create_out(&dir)?;
            for (t, snap) in g.snapshots.iter().enumerate() {
                write_mel(
                    dir.join(format!("step_{:03}.mel", t + 1)),
                    &mel_of(&q, snap)?,
                )?;
            }
        }
    }
    write_text(cfg.out.join("orders.csv"), &orders_csv)?;
    let mut extra = vec![
        ("strategy", strategy.to_string()),
        ("count", count.to_string()),
    ];
    if args.dump_steps {
        extra.push(("dump-steps", String::new()));
    }
    write_text(
        cfg.out.join("manifest.ini"),
        &manifest(cfg, &command_line("sample", &extra)),
    )?;
    println!("wrote {count} samples to {}", cfg.out.display());
    Ok(())
}

fn mel_of(q: &QuantiserSpec<f64>, grid: &crate::quantiser::SymbolGrid) -> Result<MelFile> {
    Ok(MelFile {
        sample_rate: 0,
        lower: q.lower(),
        upper: q.upper(),
        grid: q.dequantise(grid)?,
    })
}

/// One sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis_value: String,
    pub repetition: usize,
    pub mcd: f64,
    pub logf0_rmse: f64,
    pub loglik: f64,
    pub wall_ms: f64,
    pub kendall_tau: f64,
}

fn mean_or_nan(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation; 0 for a single value.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return if xs.is_empty() { f64::NAN } else { 0.0 };
    }
    let m = mean_or_nan(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn f0_error(ex: &Example, candidate: &RealGrid<f64>) -> Option<f64> {
    let f0 = ex.f0.as_ref()?;
    logf0_rmse(f0, &synth::f0_track(candidate)).ok()
}

fn model_cell(
    net: &Network,
    p: &Prepared,
    strategy: &Strategy,
    value: &str,
    rep: usize,
) -> Result<SweepRow> {
    let q = net.quantiser();
    let n = p.cfg.sampling.count.clamp(1, p.test.len());
    let (mut mcds, mut f0s, mut lls, mut taus) = (vec![], vec![], vec![], vec![]);
    for (j, ex) in p.test.iter().take(n).enumerate() {
        let mut rng = stream(
            p.cfg.seed,
            &[label("sweep"), label(value), rep as u64, j as u64],
        );
        let opts = GenerateOptions {
            record_steps: false,
            segments: ex.segments.clone(),
        };
        let g = generate(net, &ex.mu, strategy, &opts, &mut rng)?;
        let real = q.dequantise(&g.grid)?;
        if let Some(r) = &ex.real {
            mcds.push(mcd(r, &real)?);
        }
        f0s.extend(f0_error(ex, &real));
        lls.push(chain_rule_loglik(net, &ex.symbols, &ex.mu, &g.order)?);
        let l2r = orders::fixed_order(g.order.len(), Direction::LeftToRight)?;
        taus.push(kendall_tau_distance(&l2r, &g.order)? as f64);
    }
    Ok(SweepRow {
        axis_value: value.to_string(),
        repetition: rep,
        mcd: mean_or_nan(&mcds),
        logf0_rmse: mean_or_nan(&f0s),
        loglik: mean_or_nan(&lls),
        wall_ms: 0.0,
        kendall_tau: mean_or_nan(&taus),
    })
}

fn quantise_cell(p: &Prepared, levels: usize, value: &str, rep: usize) -> Result<SweepRow> {
    let q = QuantiserSpec::new(p.quantiser.lower(), p.quantiser.upper(), levels)?;
    let (mut mcds, mut f0s) = (vec![], vec![]);
    for ex in &p.test {
        let Some(real) = &ex.real else { continue };
        let back = q.round_trip(real);
        mcds.push(mcd(real, &back)?);
        f0s.extend(f0_error(ex, &back));
    }
    Ok(SweepRow {
        axis_value: value.to_string(),
        repetition: rep,
        mcd: mean_or_nan(&mcds),
        logf0_rmse: mean_or_nan(&f0s),
        loglik: f64::NAN,
        wall_ms: 0.0,
        kendall_tau: f64::NAN,
    })
}

enum CellPlan {
    Model(Strategy),
    Quantise(usize),
}

fn sweep_plan(args: &SweepArgs, p: &Prepared, base: &Strategy) -> Result<Vec<(String, CellPlan)>> {
    let cfg = &p.cfg;
    let values: Vec<String> = match (&args.axis_values, args.axis) {
        (Some(v), _) => v.iter().map(|s| s.trim().to_string()).collect(),
        (None, SweepAxis::Beta) => DEFAULT_BETAS.iter().map(|b| b.to_string()).collect(),
        (None, SweepAxis::K) => ["1", "2", "4", "8"].map(String::from).to_vec(),
        (None, SweepAxis::Q) => ["2", "4", "10", "100"].map(String::from).to_vec(),
        (None, SweepAxis::Strategy) => {
            let mut v: Vec<String> = ["default", "l2r", "r2l", "top1", "top1*"]
                .map(String::from)
                .to_vec();
            if p.test.iter().all(|e| e.segments.is_some()) {
                v.push("duration".into());
            }
            v
        }
    };
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one axis value".into()));
    }
    let bad = |v: &str| Error::Config(format!("bad {:?} axis value `{v}`", args.axis));
    values
        .into_iter()
        .map(|v| {
            let plan = match args.axis {
                SweepAxis::Beta => {
                    let beta: f64 = v.parse().map_err(|_| bad(&v))?;
                    let mut s = base.clone();
                    s.kind = StrategyKind::Beta {
                        beta,
                        log: cfg.sampling.swap_log,
                    };
                    CellPlan::Model(
                        Strategy::new(s.kind, s.values)
                            .map_err(|e| Error::Config(e.to_string()))?,
                    )
                }
                SweepAxis::K => {
                    let k: usize = v.parse().map_err(|_| bad(&v))?;
                    let values = match args.strategy.values {
                        Some(ValuesArg::Argmax) => ValueMode::Argmax,
                        _ => ValueMode::Sample(match base.values {
                            ValueMode::Sample(t) => t,
                            ValueMode::Argmax => cfg.sampling.temperatures,
                        }),
                    };
                    CellPlan::Model(
                        Strategy::new(StrategyKind::TopK { k }, values)
                            .map_err(|e| Error::Config(e.to_string()))?,
                    )
                }
                SweepAxis::Strategy => {
                    let a = StrategyArgs {
                        strategy: Some(v.clone()),
                        ..args.strategy.clone()
                    };
                    CellPlan::Model(resolve_strategy(cfg, &a)?)
                }
                SweepAxis::Q => {
                    let q: usize = v.parse().map_err(|_| bad(&v))?;
                    if q < 2 {
                        return Err(bad(&v));
                    }
                    CellPlan::Quantise(q)
                }
            };
            Ok((v, plan))
        })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = resolve(&args.run)?;
    let (p, net) = if args.axis == SweepAxis::Q {
        (prepare(cfg, None)?, None)
    } else {
        let (p, n) = prepare_with_checkpoint(&args.run, &args.checkpoint)?;
        (p, Some(n))
    };
    let reps = args.reps.unwrap_or(DEFAULT_REPS);
    if reps == 0 {
        return Err(Error::Config("--reps must be >= 1".into()));
    }
    let base = resolve_strategy(
        &p.cfg,
        &StrategyArgs {
            strategy: Some("default".into()),
            ..args.strategy.clone()
        },
    )?;
    let plan = sweep_plan(args, &p, &base)?;
    create_out(&p.cfg.out)?;

    let cells: Vec<(usize, usize)> = (0..plan.len())
        .flat_map(|v| (0..reps).map(move |r| (v, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", args.jobs)))?;
    let timing = p.cfg.timing;
    let results: Vec<Result<SweepRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(v, rep)| {
                let (value, cell) = &plan[v];
                let start = Instant::now();
                let mut row = match cell {
                    CellPlan::Model(s) => model_cell(
                        net.as_ref().expect("model axes load a checkpoint"),
                        &p,
                        s,
                        value,
                        rep,
                    ),
                    CellPlan::Quantise(q) => quantise_cell(&p, *q, value, rep),
                }?;
                if timing {
                    row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
                }
                Ok(row)
            })
            .collect()
    });

    let mut table = format!("{SWEEP_HEADER}\n");
    let mut failures = String::from("axis_value,repetition,error\n");
    let mut ok_rows = Vec::new();
    let mut failed = 0;
    for (&(v, rep), r) in cells.iter().zip(results) {
        match r {
            Ok(row) => {
                table.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.axis_value,
                    row.repetition,
                    row.mcd,
                    row.logf0_rmse,
                    row.loglik,
                    row.wall_ms
                ));
                ok_rows.push(row);
            }
            Err(e) => {
                failed += 1;
                log::warn!("cell {} rep {rep} failed: {e}", plan[v].0);
                failures.push_str(&format!(
                    "{},{rep},\"{}\"\n",
                    plan[v].0,
                    e.to_string().replace('"', "'")
                ));
            }
        }
    }
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut dat = String::from("# index axis_value mcd_mean mcd_std logf0_rmse_mean logf0_rmse_std loglik_mean loglik_std\n");
    for (i, (value, _)) in plan.iter().enumerate() {
        let rows: Vec<&SweepRow> = ok_rows.iter().filter(|r| &r.axis_value == value).collect();
        let col = |f: fn(&SweepRow) -> f64| {
            rows.iter()
                .map(|r| f(r))
                .filter(|x| !x.is_nan())
                .collect::<Vec<_>>()
        };
        let (m, f, l, k) = (
            col(|r| r.mcd),
            col(|r| r.logf0_rmse),
            col(|r| r.loglik),
            col(|r| r.kendall_tau),
        );
        summary.push_str(&format!(
            "{value},{},{},{},{},{},{},{},{}\n",
            rows.len(),
            mean_or_nan(&m),
            std_dev(&m),
            mean_or_nan(&f),
            std_dev(&f),
            mean_or_nan(&l),
            std_dev(&l),
            mean_or_nan(&k)
        ));
        dat.push_str(&format!(
            "{i} \"{value}\" {} {} {} {} {} {}\n",
            mean_or_nan(&m),
            std_dev(&m),
            mean_or_nan(&f),
            std_dev(&f),
            mean_or_nan(&l),
            std_dev(&l)
        ));
    }
    write_text(p.cfg.out.join("sweep.csv"), &table)?;
    write_text(p.cfg.out.join("summary.csv"), &summary)?;
    write_text(p.cfg.out.join("sweep.dat"), &dat)?;
    let values: Vec<&str> = plan.iter().map(|(v, _)| v.as_str()).collect();
    let extra = [
        ("axis", format!("{:?}", args.axis).to_lowercase()),
        ("axis-values", values.join(",")),
        ("reps", reps.to_string()),
    ];
    write_text(
        p.cfg.out.join("manifest.ini"),
        &manifest(&p.cfg, &command_line("sweep", &extra)),
    )?;
    if failed > 0 {
        write_text(p.cfg.out.join("failures.csv"), &failures)?;
        return Err(Error::SweepFailures {
            failed,
            total: cells.len(),
        });
    }
    print!("{summary}");
    Ok(())
}

pub fn cmd_quantise(args: &QuantiseArgs) -> Result<()> {
    if !args.input.exists() {
        return Err(Error::Config(format!(
            "input {} does not exist",
            args.input.display()
        )));
    }
    let mel = load_grid(&args.input)?;
    let (lo, hi) = if mel.lower < mel.upper {
        (mel.lower, mel.upper)
    } else {
        mel.grid.min_max().unwrap_or((0.0, 1.0))
    };
    let a = args.a.unwrap_or(lo);
    let b = args.b.unwrap_or(hi);
    let q = QuantiserSpec::new(a, b, args.q).map_err(|e| Error::Config(e.to_string()))?;
    create_out(&args.out)?;
    let symbols = q.quantise(&mel.grid);
    let back = q.dequantise(&symbols)?;
    write_symbol_csv(
        BufWriter::new(File::create(args.out.join("symbols.csv"))?),
        &symbols,
    )?;
    write_mel(
        args.out.join("reconstructed.mel"),
        &MelFile {
            sample_rate: mel.sample_rate,
            lower: a,
            upper: b,
            grid: back.clone(),
        },
    )?;
    let clamped = mel.grid.map(|v| v.clamp(a, b));
    let max_err = clamped
        .data()
        .iter()
        .zip(back.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let report = format!(
        "levels,lower,upper,mcd,max_abs_error,error_bound\n{},{a},{b},{},{max_err},{}\n",
        args.q,
        mcd(&mel.grid, &back)?,
        q.max_round_trip_error()
    );
    write_text(args.out.join("report.csv"), &report)?;
    print!("{report}");
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (p, net) = prepare_with_checkpoint(&args.run, &args.checkpoint)?;
    let cfg = &p.cfg;
    let strategy = resolve_strategy(cfg, &args.strategy)?;
    create_out(&cfg.out)?;
    let frames = p.test[0].symbols.frames();
    let mut rows: Vec<(String, f64)> = Vec::new();

    // Order comparison on sequences of the common length.
    let seqs: Vec<_> = p
        .test
        .iter()
        .filter(|e| e.symbols.frames() == frames)
        .map(|e| (e.symbols.clone(), e.mu.clone()))
        .collect();
    let mut order_list = vec![
        (
            "l2r".to_string(),
            orders::fixed_order(frames, Direction::LeftToRight)?,
        ),
        (
            "r2l".to_string(),
            orders::fixed_order(frames, Direction::RightToLeft)?,
        ),
    ];
    let mut rng = stream(cfg.seed, &[label("eval-orders")]);
    for i in 0..cfg.sampling.random_orders {
        order_list.push((
            format!("random{i}"),
            orders::uniform_order(frames, &mut rng)?,
        ));
    }
    let ords: Vec<_> = order_list.iter().map(|(_, o)| o.clone()).collect();
    let mut per_order = String::from("label,order,mean_loglik\n");
    if seqs.len() >= 2 {
        let spread = order_spread(&net, &seqs, &ords)?;
        for ((name, o), m) in order_list.iter().zip(&spread.means) {
            per_order.push_str(&format!("{name},{},{m}\n", o.to_csv_field()));
        }
        let l2r: Vec<f64> = spread.table.iter().map(|r| r[0]).collect();
        let r2l: Vec<f64> = spread.table.iter().map(|r| r[1]).collect();
        let t = paired_t_test(&l2r, &r2l)?;
        rows.push(("order_anova_f".into(), spread.anova.f));
        rows.push(("order_anova_p".into(), spread.anova.p_value));
        rows.push(("l2r_minus_r2l_loglik".into(), t.mean_difference));
        rows.push(("l2r_vs_r2l_p".into(), t.p_value));
    }
    write_text(cfg.out.join("order_loglik.csv"), &per_order)?;

    if frames <= MAX_EXACT_FRAMES {
        let elbos = p
            .test
            .par_iter()
            .map(|e| exact_elbo(&net, &e.symbols, &e.mu))
            .collect::<Result<Vec<_>>>()?;
        rows.push(("mean_exact_elbo".into(), mean_or_nan(&elbos)));
    }
    if let Some(d) = &p.toy {
        if let Ok(n) = d.require_enumerable() {
            rows.push(("truth_entropy".into(), d.entropy()?));
            let mu = d.prior();
            if frames <= MAX_EXACT_FRAMES && n <= 10_000 {
                let probs = d.probabilities()?;
                let gap = (0..n)
                    .into_par_iter()
                    .map(|i| Ok(probs[i] * -exact_elbo(&net, &d.grid_from_index(i), &mu)?))
                    .collect::<Result<Vec<f64>>>()?
                    .iter()
                    .sum::<f64>();
                rows.push(("expected_negative_elbo".into(), gap));
            }
            let div = model_vs_truth(
                &net,
                d,
                &mu,
                &strategy,
                cfg.sampling.mc_samples,
                &mut stream(cfg.seed, &[label("eval-mc")]),
            )?;
            rows.push(("tv".into(), div.tv));
            rows.push(("kl".into(), div.kl));
        }
    }
    let mut csv = String::from("metric,value\n");
    for (k, v) in &rows {
        csv.push_str(&format!("{k},{v}\n"));
    }
    write_text(cfg.out.join("eval.csv"), &csv)?;
    write_text(
        cfg.out.join("manifest.ini"),
        &manifest(
            cfg,
            &command_line("eval", &[("strategy", strategy.to_string())]),
        ),
    )?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "strategy {strategy}")?;
    for (k, v) in &rows {
        writeln!(w, "{k:>24}  {v:.6}")?;
    }
    Ok(())
}

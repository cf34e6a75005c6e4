use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use super::config::{MenusFile, RunConfig};
use super::rundir::{Report, RunDir};
use super::Command;
use crate::accel::{pipeline_cost, validate, AcceleratorConfig, CostReport, LayerDesc, Violation};
use crate::acrl::{evaluate_net, train, ActionMode, ActorCriticNet, Teacher};
use crate::cosearch::{finetune_child, pareto_sweep, run, TracePoint};
use crate::das::{brute_force, search};
use crate::supernet::NetDescription;
use crate::tensorcore::{load_checkpoint, save_checkpoint};
use crate::{Error, Result};

pub(super) fn dispatch(cmd: &Command, cfg: &mut RunConfig, dir: &RunDir) -> Result<()> {
    match cmd {
        Command::Train { steps } => {
            if let Some(s) = steps {
                cfg.train.total_steps = *s;
            }
            revalidate(cfg)?;
            dir.snapshot(cfg, "train", &[cfg.seed])?;
            cmd_train(cfg, dir)
        }
        Command::Search { steps, lambda } => {
            if let Some(s) = steps {
                cfg.search.total_steps = *s;
            }
            if let Some(l) = lambda {
                cfg.search.lambda = *l;
            }
            revalidate(cfg)?;
            dir.snapshot(cfg, "search", &[cfg.seed])?;
            cmd_search(cfg, dir)
        }
        Command::Das { net, menus, steps, brute_force } => {
            if let Some(m) = menus {
                cfg.menus = MenusFile::load(m)?;
            }
            if let Some(s) = steps {
                cfg.das.steps = *s;
            }
            revalidate(cfg)?;
            dir.snapshot(cfg, "das", &[cfg.seed])?;
            cmd_das(cfg, dir, net, *brute_force)
        }
        Command::Eval { net, ckpt, episodes } => {
            dir.snapshot(cfg, "eval", &[cfg.seed])?;
            cmd_eval(cfg, dir, net, ckpt, *episodes)
        }
        Command::AccelEval { net, cfg: accel } => {
            dir.snapshot(cfg, "accel-eval", &[])?;
            cmd_accel_eval(cfg, dir, net, accel)
        }
        Command::Pareto { steps } => {
            if let Some(s) = steps {
                cfg.search.total_steps = *s;
            }
            revalidate(cfg)?;
            let seeds = cfg.pareto.seeds.clone();
            dir.snapshot(cfg, "pareto", &seeds)?;
            cmd_pareto(cfg, dir)
        }
        Command::ExportPlots { .. } => unreachable!("handled before a run directory exists"),
    }
}

fn revalidate(cfg: &RunConfig) -> Result<()> {
    cfg.validate().map_err(Error::Config)
}

fn teacher_of(t: &Option<(ActorCriticNet, Vec<usize>)>) -> Option<Teacher<'_>> {
    t.as_ref().map(|(net, path)| Teacher { net, path })
}

fn save_net(dir: &RunDir, desc: &NetDescription, net: &ActorCriticNet) -> Result<()> {
    desc.save(&dir.file("child.net"))?;
    let p = dir.file("child.ckpt");
    save_checkpoint(net.params(), &p).map_err(|e| Error::format(p, e))
}

fn cmd_train(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let teacher = cfg.load_teacher()?;
    let spec = cfg.env.spec();
    let desc = NetDescription::new(spec.obs_shape, spec.num_actions, &cfg.net.ops, cfg.net.channels, cfg.net.hidden);
    let mut net = ActorCriticNet::new(desc.net_config(), cfg.seed)?;
    let path = net.default_path();
    let mut log = dir.jsonl("log.jsonl", "train")?;
    let report = train(&mut net, &path, &cfg.train, teacher_of(&teacher), Some(&mut log))?;
    save_net(dir, &desc, &net)?;
    dir.write_json("report.json", &Report::new("train", &report))?;
    println!("score {:.3} after {} steps ({} updates)", report.final_score, report.steps, report.updates);
    Ok(())
}

#[derive(Serialize)]
struct SearchSummary<'a> {
    score: f64,
    finetune_steps: usize,
    iterations: usize,
    steps: usize,
    child_path: &'a [usize],
    ops: Vec<String>,
    total_macs: u64,
    fps: f64,
    bottleneck_cycles: f64,
    cost: &'a CostReport,
}

fn write_traces(dir: &RunDir, cfg: &RunConfig, history: &[TracePoint], n_layers: usize) -> Result<()> {
    let net_cfg = cfg.search.net_config();
    let csv_err = |name: &str| {
        let p = dir.file(name);
        move |e: csv::Error| Error::format(&p, e)
    };
    let mut w = dir.csv("alpha.csv")?;
    let mut header = vec!["iteration".to_string(), "step".into(), "tau".into()];
    for (l, cell) in net_cfg.cells.iter().enumerate() {
        header.extend(cell.iter().map(|k| format!("cell{l}.{k}")));
    }
    w.write_record(&header).map_err(csv_err("alpha.csv"))?;
    for p in history {
        let mut row = vec![p.iteration.to_string(), p.step.to_string(), p.tau.to_string()];
        row.extend(p.alpha.iter().flatten().map(f64::to_string));
        w.write_record(&row).map_err(csv_err("alpha.csv"))?;
    }
    w.flush().map_err(|e| Error::io(dir.file("alpha.csv"), e))?;

    let mut w = dir.csv("phi.csv")?;
    let mut header = vec!["iteration".to_string(), "step".into(), "das_cost".into()];
    header.extend(cfg.menus.param_names(n_layers));
    w.write_record(&header).map_err(csv_err("phi.csv"))?;
    for p in history {
        let mut row = vec![p.iteration.to_string(), p.step.to_string(), p.das_cost.to_string()];
        row.extend(p.phi_star.iter().map(usize::to_string));
        w.write_record(&row).map_err(csv_err("phi.csv"))?;
    }
    w.flush().map_err(|e| Error::io(dir.file("phi.csv"), e))
}

fn cmd_search(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let teacher = cfg.load_teacher()?;
    let mut trace = dir.jsonl("trace.jsonl", "search")?;
    let out = run(&cfg.search, &cfg.menus, teacher_of(&teacher), Some(&mut trace))?;
    write_traces(dir, cfg, &out.history, out.child.layers.len())?;
    let tuned = finetune_child(&out.supernet, &out.child_path, &cfg.search, cfg.finetune_steps, teacher_of(&teacher))?;
    save_net(dir, &out.child, &tuned.net)?;
    out.accel.save(&dir.file("accel.acc"))?;
    let summary = SearchSummary {
        score: tuned.score,
        finetune_steps: cfg.finetune_steps,
        iterations: out.iterations,
        steps: out.steps,
        child_path: &out.child_path,
        ops: out.child.ops.iter().map(|o| o.to_string()).collect(),
        total_macs: out.child.total_macs,
        fps: out.report.fps,
        bottleneck_cycles: out.report.bottleneck_cycles,
        cost: &out.report,
    };
    dir.write_json("report.json", &Report::new("search", &summary))?;
    println!("child {}  MACs {}  score {:.3}", summary.ops.join(" "), summary.total_macs, summary.score);
    println!("accelerator: {} chunks, {} PEs, {:.0} FPS", out.accel.n_chunks(), out.accel.pe_total(), out.report.fps);
    Ok(())
}

#[derive(Serialize)]
struct Found<'a> {
    cost: f64,
    fps: f64,
    choices: &'a [usize],
}

#[derive(Serialize)]
struct DasSummary<'a> {
    steps: usize,
    das: Found<'a>,
    brute_force: Option<Found<'a>>,
    evaluated: Option<usize>,
    ratio: Option<f64>,
}

fn fps_of(layers: &[LayerDesc], accel: &AcceleratorConfig) -> f64 {
    pipeline_cost(layers, accel).map_or(0.0, |r| r.fps)
}

fn describe(a: &AcceleratorConfig) -> Vec<String> {
    a.chunks
        .iter()
        .map(|c| {
            format!(
                "{}x{} {:?} {}KiB {} {}/{}/{}x{} {:?}",
                c.pe_rows,
                c.pe_cols,
                c.interconnect,
                c.buffer_bytes >> 10,
                c.split,
                c.tiling.tc,
                c.tiling.tk,
                c.tiling.th,
                c.tiling.tw,
                c.loop_order
            )
        })
        .collect()
}

fn cmd_das(cfg: &RunConfig, dir: &RunDir, net: &Path, with_oracle: bool) -> Result<()> {
    let child = NetDescription::load(net)?;
    let layers = child.layer_descs();
    let phi = dir.file("phi.csv");
    let mut w = BufWriter::new(std::fs::File::create(&phi).map_err(|e| Error::io(&phi, e))?);
    let res = search(&layers, &cfg.menus, &cfg.das_options(), Some(&mut w))?;
    drop(w);
    res.config.save(&dir.file("accel.acc"))?;
    let oracle = if with_oracle { Some(brute_force(&layers, &cfg.menus, cfg.das.brute_force_cap)?) } else { None };

    let das_fps = fps_of(&layers, &res.config);
    println!("{:<16} {:>16} {:>16}", "", "DAS", if oracle.is_some() { "brute force" } else { "" });
    let bf = oracle.as_ref();
    let col = |v: Option<String>| v.unwrap_or_default();
    println!("{:<16} {:>16.0} {:>16}", "cost (cycles)", res.cost, col(bf.map(|b| format!("{:.0}", b.cost))));
    println!("{:<16} {:>16.1} {:>16}", "FPS", das_fps, col(bf.map(|b| format!("{:.1}", fps_of(&layers, &b.config)))));
    println!("{:<16} {:>16} {:>16}", "chunks", res.config.n_chunks(), col(bf.map(|b| b.config.n_chunks().to_string())));
    println!("{:<16} {:>16} {:>16}", "PEs", res.config.pe_total(), col(bf.map(|b| b.config.pe_total().to_string())));
    println!("{:<16} {:>16} {:>16}", "evaluated", cfg.das.steps, col(bf.map(|b| b.evaluated.to_string())));
    for (i, d) in describe(&res.config).iter().enumerate() {
        println!("DAS chunk {i}: {d}");
    }
    if let Some(b) = bf {
        for (i, d) in describe(&b.config).iter().enumerate() {
            println!("oracle chunk {i}: {d}");
        }
        println!("cost ratio DAS / oracle: {:.4}", res.cost / b.cost);
    }
    let summary = DasSummary {
        steps: cfg.das.steps,
        das: Found { cost: res.cost, fps: das_fps, choices: &res.choices },
        brute_force: bf.map(|b| Found { cost: b.cost, fps: fps_of(&layers, &b.config), choices: &b.choices }),
        evaluated: bf.map(|b| b.evaluated),
        ratio: bf.map(|b| res.cost / b.cost),
    };
    dir.write_json("report.json", &Report::new("das", &summary))
}

#[derive(Serialize)]
struct EvalSummary {
    score: f64,
    episodes: usize,
    seed: u64,
}

fn cmd_eval(cfg: &RunConfig, dir: &RunDir, net: &Path, ckpt: &Path, episodes: usize) -> Result<()> {
    let desc = NetDescription::load(net)?;
    if desc.in_shape != cfg.env.spec().obs_shape {
        return Err(Error::config(format!("{} expects observations {:?}, env {} gives {:?}", net.display(), desc.in_shape, cfg.env, cfg.env.spec().obs_shape)));
    }
    let params = load_checkpoint(ckpt).map_err(|e| Error::format(ckpt, e))?;
    let model = ActorCriticNet::from_params(desc.net_config(), params).map_err(|e| Error::format(ckpt, e))?;
    let score = evaluate_net(&model, &model.default_path(), cfg.env, episodes.max(1), cfg.seed, ActionMode::Sample)?;
    println!("mean return over {episodes} episodes: {score:.4}");
    dir.write_json("report.json", &Report::new("eval", EvalSummary { score, episodes, seed: cfg.seed }))
}

fn is_budget(v: &Violation) -> bool {
    matches!(v, Violation::PeBudget { .. } | Violation::SramBudget { .. } | Violation::Tiling { .. })
}

fn cmd_accel_eval(cfg: &RunConfig, dir: &RunDir, net: &Path, accel: &Path) -> Result<()> {
    let child = NetDescription::load(net)?;
    let config = AcceleratorConfig::load(accel)?;
    let layers = child.layer_descs();
    if let Err(vs) = validate(&config, &layers, &cfg.menus.budget) {
        for v in &vs {
            eprintln!("violation: {v}");
        }
        let msg = vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(if vs.iter().any(is_budget) { Error::Budget(msg) } else { Error::config(msg) });
    }
    let report = pipeline_cost(&layers, &config)?;
    println!("{:<14} {:>6} {:>12} {:>12}", "layer", "chunk", "MACs", "cycles");
    for (i, l) in layers.iter().enumerate() {
        println!("{:<14} {:>6} {:>12} {:>12.0}", l.name, config.assignment[i], l.macs, report.layer_cycles[i]);
    }
    for (c, cycles) in report.chunk_cycles.iter().enumerate() {
        println!("chunk {c}: {cycles:.0} cycles");
    }
    println!("bottleneck chunk {} at {:.0} cycles, {:.1} FPS", report.bottleneck, report.bottleneck_cycles, report.fps);
    println!("{} PEs, {} buffer bytes", report.pe_count, report.buffer_bytes);
    dir.write_json("report.json", &Report::new("accel-eval", &report))
}

fn cmd_pareto(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let teacher = cfg.load_teacher()?;
    let p = &cfg.pareto;
    let (runs, rows) = pareto_sweep(&cfg.search, &cfg.menus, &p.lambdas, &p.seeds, p.finetune_steps, teacher_of(&teacher))?;
    let mut w = dir.csv("pareto.csv")?;
    let err = |e: csv::Error| Error::format(dir.file("pareto.csv"), e);
    w.write_record(["lambda", "seed", "score", "fps", "macs", "ops"]).map_err(err)?;
    for r in &runs {
        let rec = [r.lambda.to_string(), r.seed.to_string(), r.score.to_string(), r.fps.to_string(), r.macs.to_string(), r.ops.join("+")];
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(dir.file("pareto.csv"), e))?;
    let mut w = dir.csv("summary.csv")?;
    let err = |e: csv::Error| Error::format(dir.file("summary.csv"), e);
    for r in &rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(dir.file("summary.csv"), e))?;
    println!("{:>8} {:>6} {:>10} {:>12} {:>8}", "lambda", "runs", "mean MACs", "mean FPS", "score");
    for r in &rows {
        println!("{:>8e} {:>6} {:>10.0} {:>12.1} {:>8.3}", r.lambda, r.runs, r.mean_macs, r.mean_fps, r.mean_score);
    }
    #[derive(Serialize)]
    struct Body<'a> {
        rows: &'a [crate::cosearch::ParetoRow],
        runs: &'a [crate::cosearch::ParetoRun],
    }
    dir.write_json("report.json", &Report::new("pareto", Body { rows: &rows, runs: &runs }))
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use pilepick::eval::{bar_chart_svg, parse_csv, run_benchmark, BenchmarkConfig, Policy, DIFF_THRESHOLD};
use pilepick::geom::Vec3;
use pilepick::mapping::{orbit_cameras, orbit_scan, InstanceMap, MapConfig, ORBIT_HEIGHT, ORBIT_RADIUS, ORBIT_VIEWS};
use pilepick::percept::NoiseParams;
use pilepick::plan::{heuristic_up, RrtParams, BASELINE_STEPS, HEURISTIC_HEIGHT, RESET_POSE};
use pilepick::qnet::load_checkpoint;
use pilepick::sim::{execute_trajectory, primitive_catalog, spawn_pile, ReplayFile, Scene, SceneFile};
use pilepick::train::{run_training, setup_episode, TrainerConfig};

#[derive(Parser)]
#[command(name = "pilepick", version, about = "Safe extraction of objects from simulated piles")]
struct Cli {
    /// Seed for every random choice the command makes
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate settled piles and write them as scene files
    GenPiles(GenPiles),
    /// Orbit-scan a pile, dump the object-level map and report pose errors
    MapDemo(MapDemo),
    /// Train a Q-network
    Train(Train),
    /// Benchmark extraction policies on paired piles
    Eval(Eval),
    /// Re-execute a recorded episode and check the motion log matches
    Replay(Replay),
    /// Render a benchmark CSV as an SVG bar chart
    Plot(Plot),
}

#[derive(Args)]
struct GenPiles {
    /// Number of piles; pile k uses seed + k
    #[arg(long, default_value_t = 10)]
    count: u64,
    #[arg(long, default_value_t = 4)]
    objects: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapDemo {
    #[arg(long, default_value_t = 4)]
    objects: usize,
    /// Enable the perception noise model
    #[arg(long)]
    noise: bool,
    /// Where to write the map dump (JSON)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Train {
    /// key = value file; unset keys keep their defaults (see `TrainerConfig`)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override a config key, e.g. `--set updates=500`; flags win over the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct Eval {
    /// naive | heuristic | rrt | learned:<checkpoint>; repeat for several
    #[arg(long = "policy", required = true)]
    policies: Vec<String>,
    /// Number of piles; pile k uses seed + k
    #[arg(long, default_value_t = 100)]
    piles: u64,
    #[arg(long, default_value_t = 4)]
    objects: usize,
    /// Scan the pile with the perception noise model enabled
    #[arg(long)]
    noise: bool,
    #[arg(long, default_value_t = 1.0)]
    settle_time: f64,
    #[arg(long, default_value_t = DIFF_THRESHOLD)]
    diff_threshold: f64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// CSV destination; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Replay {
    /// Replay file to verify
    file: PathBuf,
    /// Instead of verifying, record a straight-up extraction on pile `seed`
    #[arg(long)]
    record: bool,
    #[arg(long, default_value_t = 4)]
    objects: usize,
}

#[derive(Args)]
struct Plot {
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "Safety metrics by policy")]
    title: String,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn gen_piles(a: GenPiles, seed: u64) -> Result<(), Failure> {
    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    let catalog = primitive_catalog();
    for k in 0..a.count {
        let s = seed + k;
        let mut scene = Scene::new(s);
        spawn_pile(&mut scene, &catalog, a.objects, s).map_err(runtime)?;
        let path = a.out.join(format!("pile_{s:06}.json"));
        SceneFile::from_scene(&scene).save(&path).map_err(runtime)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn map_demo(a: MapDemo, seed: u64) -> Result<(), Failure> {
    let catalog = primitive_catalog();
    let mut scene = Scene::new(seed);
    spawn_pile(&mut scene, &catalog, a.objects, seed).map_err(runtime)?;
    let mut map = InstanceMap::new(catalog, MapConfig::default());
    let noise = if a.noise { NoiseParams::ablation(seed) } else { NoiseParams::off(seed) };
    let cams = orbit_cameras(Vec3::ZERO, ORBIT_VIEWS, ORBIT_RADIUS, ORBIT_HEIGHT);
    let report = orbit_scan(&scene, &mut map, &cams, &noise, 0).map_err(runtime)?;
    println!("body,category,visibility,instance,cad,translation_error_m");
    for (b, body) in scene.bodies.iter().enumerate() {
        let inst = report.body_instance[b].and_then(|i| map.instances().iter().find(|x| x.id == i));
        let cad = inst.and_then(|i| i.cad_pose);
        let err = cad.map_or(String::new(), |p| format!("{}", (p.position - body.pose.position).norm()));
        println!(
            "{b},{},{:.3},{},{},{err}",
            body.shape.category(),
            report.max_visibility[b],
            inst.map_or(String::new(), |i| i.id.to_string()),
            cad.is_some()
        );
    }
    if let Some(out) = a.out {
        write_file(&out, &serde_json::to_string(&map.dump()).map_err(runtime)?)?;
    }
    Ok(())
}

fn train(a: Train, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) if !p.exists() => return Err(Failure::Usage(format!("config file {} not found", p.display()))),
        Some(p) => TrainerConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => TrainerConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Usage(format!("expected KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let out = run_training(&cfg, &primitive_catalog(), Some(&a.out)).map_err(runtime)?;
    println!(
        "{} updates, {} episodes ({} skipped); final checkpoint {}",
        out.losses.len(),
        out.episodes,
        out.skipped,
        a.out.join("final.ckpt").display()
    );
    Ok(())
}

fn parse_policy(s: &str, seed: u64) -> Result<Policy, Failure> {
    match s {
        "naive" => Ok(Policy::Naive),
        "heuristic" => Ok(Policy::Heuristic),
        "rrt" => Ok(Policy::Rrt(RrtParams { seed, ..Default::default() })),
        _ => {
            let path = s.strip_prefix("learned:").ok_or_else(|| Failure::Usage(format!("unknown policy {s:?}")))?;
            let net = load_checkpoint(Path::new(path)).map_err(|e| Failure::Usage(format!("{path}: {e}")))?;
            let label = Path::new(path).file_stem().map_or(path.into(), |f| f.to_string_lossy().into_owned());
            Ok(Policy::Learned { label: format!("{}-{label}", net.variant.name()), net: Arc::new(net) })
        }
    }
}

fn eval(a: Eval, seed: u64) -> Result<(), Failure> {
    let policies = a.policies.iter().map(|p| parse_policy(p, seed)).collect::<Result<Vec<_>, _>>()?;
    if a.piles == 0 {
        return Err(Failure::Usage("--piles must be positive".into()));
    }
    let config = BenchmarkConfig {
        objects: a.objects,
        noise: a.noise.then(|| NoiseParams::ablation(seed)),
        settle_time: a.settle_time,
        diff_threshold: a.diff_threshold,
        threads: a.threads.max(1),
        ..Default::default()
    };
    let seeds: Vec<u64> = (seed..seed + a.piles).collect();
    let report = run_benchmark(&policies, &seeds, &config, &primitive_catalog()).map_err(runtime)?;
    let csv = report.to_csv();
    match &a.out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    let mut summary = String::new();
    for name in report.policies() {
        let m = report.mean(&name).expect("policy has rows");
        let _ = writeln!(
            summary,
            "{name}: mean sum of translations {:.4} m, mean sum of max velocities {:.4} m/s",
            m.sum_translations, m.sum_max_velocities
        );
    }
    let _ = writeln!(summary, "{} piles evaluated, {} skipped", report.seeds.len(), report.skipped.len());
    eprint!("{summary}");
    Ok(())
}

fn replay(a: Replay, seed: u64) -> Result<(), Failure> {
    if a.record {
        let setup = setup_episode(&primitive_catalog(), a.objects, seed).map_err(runtime)?;
        let mut scene = setup.scene.clone();
        let mut wps = heuristic_up(&setup.grasp, HEURISTIC_HEIGHT, BASELINE_STEPS);
        wps.push(RESET_POSE);
        let log = execute_trajectory(&mut scene, setup.target, &wps, 1.0).map_err(runtime)?;
        ReplayFile::new(&setup.scene, setup.target, vec![(wps, 1.0)], log).save(&a.file).map_err(runtime)?;
        println!("recorded {}", a.file.display());
        return Ok(());
    }
    let file = ReplayFile::load(&a.file).map_err(runtime)?;
    let log = file.rerun().map_err(runtime)?;
    if log == file.log {
        println!("MATCH");
        Ok(())
    } else {
        Err(Failure::Runtime("MISMATCH: re-executed motion log differs".into()))
    }
}

fn plot(a: Plot) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.csv).map_err(|e| Failure::Runtime(format!("{}: {e}", a.csv.display())))?;
    let rows = parse_csv(&text).map_err(runtime)?;
    write_file(&a.out, &bar_chart_svg(&rows, &a.title))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let seed = cli.seed.unwrap_or(0);
    let result = match cli.command {
        Command::GenPiles(a) => gen_piles(a, seed),
        Command::MapDemo(a) => map_demo(a, seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a, seed),
        Command::Replay(a) => replay(a, seed),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

//! The `stasm` command line: plan, verify, compare, render and generate.

mod render;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use render::{render_frames, render_gantt};

use crate::error::{Error, Result};
use crate::orchestrator::{plan_assembly, verify_paths, FullPlan, PlanStats, PlannerConfig, VerifyReport};
use crate::scenes;
use crate::world::{Event, Scene, TimedPath};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_PLANNER: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Serialized result of one planner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub scene_hash: String,
    pub seed: u64,
    pub config: PlannerConfig,
    pub makespan: f64,
    pub placed: Vec<String>,
    pub backtracks: usize,
    pub paths: BTreeMap<String, TimedPath>,
    pub events: BTreeMap<String, Vec<Event>>,
}

impl PlanFile {
    pub fn new(scene: &Scene, config: &PlannerConfig, plan: &FullPlan) -> Self {
        Self {
            scene_hash: scene.hash(),
            seed: plan.seed,
            config: config.clone(),
            makespan: plan.makespan,
            placed: plan.state.placed.clone(),
            backtracks: plan.stats.backtracks,
            paths: plan.state.committed.clone(),
            events: plan.state.events.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn check_scene(&self, scene: &Scene) -> Result<()> {
        let actual = scene.hash();
        if actual != self.scene_hash {
            return Err(Error::SceneHashMismatch {
                expected: self.scene_hash.clone(),
                actual,
            });
        }
        Ok(())
    }

    pub fn verify(&self, scene: &Scene, dt: f64) -> VerifyReport {
        verify_paths(scene, &self.paths, &self.events, dt)
    }
}

#[derive(Debug, Parser)]
#[command(name = "stasm", version, about = "Multi-robot assembly planning in space and time")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a scene and write the plan file.
    Plan(PlanArgs),
    /// Re-simulate a plan file against its scene.
    Verify(VerifyArgs),
    /// Run a grid of robot counts and seeds and emit CSV rows.
    Compare(CompareArgs),
    /// Render a plan as a Gantt chart or as frame snapshots.
    Render(RenderArgs),
    /// Write the bundled procedural scenes as JSON.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PlannerFlags {
    /// Planner config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub vmax: Option<f64>,
    #[arg(long)]
    pub max_team: Option<usize>,
    #[arg(long)]
    pub budget: Option<usize>,
}

impl PlannerFlags {
    pub fn resolve(&self) -> Result<PlannerConfig> {
        let mut c = match &self.config {
            Some(p) => PlannerConfig::from_json_str(&fs::read_to_string(p)?)?,
            None => PlannerConfig::default(),
        };
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if self.vmax.is_some() {
            c.v_max = self.vmax;
        }
        if let Some(v) = self.max_team {
            c.max_team = v;
        }
        if let Some(v) = self.budget {
            c.budget = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    pub scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use only the first N robots of the scene.
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub fixed_time: Option<f64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub planner: PlannerFlags,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub plan: PathBuf,
    pub scene: PathBuf,
    #[arg(long, default_value_t = 0.005)]
    pub dt: f64,
    #[arg(long)]
    pub agents: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub scene: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5])]
    pub agents: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    /// Also run the fixed-step baseline with this slot length.
    #[arg(long)]
    pub fixed_time: Option<f64>,
    /// Append rows to this CSV file instead of printing them.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub planner: PlannerFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    Gantt,
    Frames,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub plan: PathBuf,
    pub scene: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = RenderMode::Gantt)]
    pub mode: RenderMode,
    /// Frame spacing in seconds.
    #[arg(long, default_value_t = 0.5)]
    pub dt: f64,
    #[arg(long)]
    pub agents: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scene names, or `all`.
    #[arg(default_value = "all")]
    pub names: Vec<String>,
    #[arg(long, short, default_value = "scenes")]
    pub out: PathBuf,
}

fn load_scene(path: &Path, agents: Option<usize>) -> Result<Scene> {
    let scene = Scene::load(path)?;
    match agents {
        Some(m) => scene.with_robots(m),
        None => Ok(scene),
    }
}

fn input_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_INPUT
}

/// Phase timing table in the layout keyframes / path / post / total.
pub fn timing_table(stats: &PlanStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>12} {:>12} {:>12} {:>12}", "keyframes", "path", "post", "total");
    let _ = writeln!(
        s,
        "{:>12.3} {:>12.3} {:>12.3} {:>12.3}",
        stats.keyframes, stats.path, stats.post, stats.total
    );
    s
}

pub fn cmd_plan(args: &PlanArgs) -> i32 {
    let scene = match load_scene(&args.scene, args.agents) {
        Ok(s) => s,
        Err(e) => return input_error(&e),
    };
    let mut config = match args.planner.resolve() {
        Ok(c) => c,
        Err(e) => return input_error(&e),
    };
    if args.fixed_time.is_some() {
        config.fixed_time = args.fixed_time;
    }
    config.seed = args.seed;
    if let Err(e) = config.validate() {
        return input_error(&e);
    }
    let plan = match plan_assembly(&scene, &config, args.seed) {
        Ok(p) => p,
        Err(e @ (Error::PlannerFailure(_) | Error::NothingPlaceable | Error::BacktrackTooDeep { .. })) => {
            eprintln!("error: {e}");
            return EXIT_PLANNER;
        }
        Err(e) => return input_error(&e),
    };
    let file = PlanFile::new(&scene, &config, &plan);
    print!("{}", timing_table(&plan.stats));
    println!(
        "makespan {:.4} placed {} backtracks {}",
        plan.makespan,
        plan.state.placed.len(),
        plan.stats.backtracks
    );
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("plan_seed{}.json", args.seed)));
    if let Err(e) = fs::write(&out, file.to_json()) {
        return input_error(&e.into());
    }
    EXIT_OK
}

pub fn cmd_verify(args: &VerifyArgs) -> i32 {
    if !(args.dt > 0.0) {
        return input_error(&Error::InvalidConfig("dt must be positive".into()));
    }
    let loaded = load_scene(&args.scene, args.agents).and_then(|s| Ok((s, PlanFile::load(&args.plan)?)));
    let (scene, plan) = match loaded {
        Ok(x) => x,
        Err(e) => return input_error(&e),
    };
    if let Err(e) = plan.check_scene(&scene) {
        return input_error(&e);
    }
    let report = plan.verify(&scene, args.dt);
    for f in &report.findings {
        println!("{f}");
    }
    println!("samples {} findings {}", report.samples, report.findings.len());
    if report.is_empty() {
        EXIT_OK
    } else {
        EXIT_VERIFY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Variable,
    Fixed,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Variable => "variable",
            Variant::Fixed => "fixed",
        }
    }
}

/// One cell of a comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scenario: String,
    pub m: usize,
    pub seed: u64,
    pub variant: Variant,
    pub makespan: Option<f64>,
    pub stats: PlanStats,
    pub status: String,
}

pub const CSV_HEADER: &str =
    "scenario,m,seed,variant,makespan,compute_keyframes,compute_path,compute_post,total,status";

impl CompareRow {
    pub fn csv(&self) -> String {
        let ms = self.makespan.map_or(String::new(), |m| format!("{m:.6}"));
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.scenario,
            self.m,
            self.seed,
            self.variant.as_str(),
            ms,
            self.stats.keyframes,
            self.stats.path,
            self.stats.post,
            self.stats.total,
            self.status
        )
    }
}

/// Plans every (m, seed, variant) cell in parallel; rows come back in grid order.
pub fn run_compare(
    scenario: &str,
    scene: &Scene,
    config: &PlannerConfig,
    agents: &[usize],
    seeds: &[u64],
    fixed_time: Option<f64>,
) -> Result<Vec<CompareRow>> {
    let mut cells = Vec::new();
    for &m in agents {
        let sub = scene.with_robots(m)?;
        for &seed in seeds {
            cells.push((sub.clone(), m, seed, Variant::Variable));
            if fixed_time.is_some() {
                cells.push((sub.clone(), m, seed, Variant::Fixed));
            }
        }
    }
    Ok(cells
        .into_par_iter()
        .map(|(sub, m, seed, variant)| {
            let mut c = config.clone();
            c.seed = seed;
            c.fixed_time = match variant {
                Variant::Variable => None,
                Variant::Fixed => fixed_time,
            };
            let (makespan, stats, status) = match plan_assembly(&sub, &c, seed) {
                Ok(p) => {
                    let report = crate::orchestrator::verify_plan(&sub, &p, 0.005);
                    let status = if report.is_empty() { "ok" } else { "unverified" };
                    (Some(p.makespan), p.stats, status.to_owned())
                }
                Err(e) => (None, PlanStats::default(), format!("failed: {}", e.to_string().replace(',', ";"))),
            };
            CompareRow {
                scenario: scenario.to_owned(),
                m,
                seed,
                variant,
                makespan,
                stats,
                status,
            }
        })
        .collect())
}

/// Mean of `makespan(1) / makespan(m)` over seeds, per variant and `m`.
pub fn speedups(rows: &[CompareRow]) -> BTreeMap<(Variant, usize), f64> {
    let mut base: BTreeMap<(Variant, u64), f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.m == 1) {
        if let Some(ms) = r.makespan {
            base.insert((r.variant, r.seed), ms);
        }
    }
    let mut acc: BTreeMap<(Variant, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        if let (Some(ms), Some(b)) = (r.makespan, base.get(&(r.variant, r.seed))) {
            let e = acc.entry((r.variant, r.m)).or_default();
            e.0 += b / ms;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn cmd_compare(args: &CompareArgs) -> i32 {
    if args.agents.contains(&0) {
        return input_error(&Error::InvalidConfig("robot counts must be at least 1".into()));
    }
    let (scene, config) = match Scene::load(&args.scene).and_then(|s| Ok((s, args.planner.resolve()?))) {
        Ok(x) => x,
        Err(e) => return input_error(&e),
    };
    let scenario = args
        .scene
        .file_stem()
        .map_or("scene".into(), |s| s.to_string_lossy().into_owned());
    let rows = match run_compare(&scenario, &scene, &config, &args.agents, &args.seeds, args.fixed_time) {
        Ok(r) => r,
        Err(e) => return input_error(&e),
    };
    let mut body = String::new();
    for r in &rows {
        body.push_str(&r.csv());
        body.push('\n');
    }
    match &args.out {
        Some(p) => {
            let fresh = fs::metadata(p).map_or(true, |m| m.len() == 0);
            let file = fs::OpenOptions::new().create(true).append(true).open(p);
            let res = file.and_then(|mut f| {
                if fresh {
                    writeln!(f, "{CSV_HEADER}")?;
                }
                f.write_all(body.as_bytes())
            });
            if let Err(e) = res {
                return input_error(&e.into());
            }
        }
        None => print!("{CSV_HEADER}\n{body}"),
    }
    for ((variant, m), s) in speedups(&rows) {
        eprintln!("speedup {} m={m} {s:.3}", variant.as_str());
    }
    if rows.iter().all(|r| r.makespan.is_some()) {
        EXIT_OK
    } else {
        EXIT_PLANNER
    }
}

pub fn cmd_render(args: &RenderArgs) -> i32 {
    let loaded = load_scene(&args.scene, args.agents).and_then(|s| Ok((s, PlanFile::load(&args.plan)?)));
    let (scene, plan) = match loaded {
        Ok(x) => x,
        Err(e) => return input_error(&e),
    };
    if let Err(e) = plan.check_scene(&scene) {
        return input_error(&e);
    }
    let res = fs::create_dir_all(&args.out).map_err(Error::from).and_then(|_| match args.mode {
        RenderMode::Gantt => {
            let svg = render_gantt(&scene, &plan);
            fs::write(args.out.join("gantt.svg"), svg)?;
            Ok(1)
        }
        RenderMode::Frames => {
            if !(args.dt > 0.0) {
                return Err(Error::InvalidConfig("dt must be positive".into()));
            }
            let frames = render_frames(&scene, &plan, args.dt);
            for (i, svg) in frames.iter().enumerate() {
                fs::write(args.out.join(format!("frame_{i:05}.svg")), svg)?;
            }
            Ok(frames.len())
        }
    });
    match res {
        Ok(n) => {
            println!("wrote {n} file(s) to {}", args.out.display());
            EXIT_OK
        }
        Err(e) => input_error(&e),
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> i32 {
    let names: Vec<String> = if args.names.iter().any(|n| n == "all") {
        scenes::all_names().map(str::to_owned).collect()
    } else {
        args.names.clone()
    };
    let res = fs::create_dir_all(&args.out).map_err(Error::from).and_then(|_| {
        for n in &names {
            let scene = scenes::by_name(n)?;
            let mut json = scene.to_json_pretty();
            json.push('\n');
            fs::write(args.out.join(format!("{n}.json")), json)?;
            println!("{n}: {} objects, {} robots", scene.objects.len(), scene.robots.len());
        }
        Ok(())
    });
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => input_error(&e),
    }
}

pub fn run(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Render(a) => cmd_render(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}

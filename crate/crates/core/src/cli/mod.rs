//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on error, 2 when alignment fell back to the coarse transform.

mod manifest;
mod svg;

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{self, Transform};
use crate::fit::{fit_rigid, CorrespondenceSet};
use crate::geometry::RigidTransform;
use crate::io::{self, CellTable, LandmarkSet, SchemaConfig};
use crate::matching::Discretization;
use crate::pipeline::{self, AlignmentConfig, Diagnostics, SupercellConfig};
use crate::synth::{self, SynthScenario};

pub use manifest::{InputDigest, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_COARSE_ONLY: i32 = 2;

pub const THREADS_ENV: &str = "CELLALIGN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "cellalign",
    version,
    about = "Cell-level alignment of multiplexed and brightfield tissue images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Coarse-to-fine alignment of two cell tables.
    Align(AlignArgs),
    /// Landmark accuracy of an estimated transform.
    Eval(EvalArgs),
    /// Generate a synthetic source/target pair with ground truth.
    Synth(SynthArgs),
    /// Feature concordance of paired cells after alignment.
    Concordance(ConcordanceArgs),
    /// Grid super-cells of one cell table.
    Supercell(SupercellArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct SchemaArgs {
    /// JSON column mapping for the source table.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// JSON column mapping for the target table; defaults to --schema.
    #[arg(long)]
    target_schema: Option<PathBuf>,
}

impl SchemaArgs {
    fn resolve(&self) -> Result<(SchemaConfig, SchemaConfig)> {
        let load = |p: &Option<PathBuf>| p.as_deref().map(SchemaConfig::from_json_file).transpose();
        let src = load(&self.schema)?.unwrap_or_default();
        let tgt = load(&self.target_schema)?.unwrap_or_else(|| src.clone());
        Ok((src, tgt))
    }
}

#[derive(Debug, Args)]
struct AlignArgs {
    source: PathBuf,
    target: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON alignment config; individual flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long)]
    outlier_weight: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Downsampling cap for CPD; 0 disables it.
    #[arg(long)]
    max_points: Option<usize>,
    #[arg(long)]
    kde_bandwidth: Option<f64>,
    #[arg(long)]
    density_gate: Option<f64>,
    #[arg(long)]
    window_count: Option<usize>,
    #[arg(long)]
    src_window: Option<f64>,
    #[arg(long)]
    tgt_window: Option<f64>,
    #[arg(long)]
    edge_threshold: Option<f64>,
    #[arg(long)]
    sigma_feature: Option<f64>,
    #[arg(long)]
    sigma_edge: Option<f64>,
    /// Positional kernel bandwidth; 0 disables it.
    #[arg(long)]
    sigma_position: Option<f64>,
    #[arg(long)]
    position_cutoff: Option<f64>,
    #[arg(long)]
    rrwm_alpha: Option<f64>,
    #[arg(long)]
    rrwm_beta: Option<f64>,
    #[arg(long)]
    rrwm_max_iter: Option<usize>,
    /// hungarian or sinkhorn-greedy.
    #[arg(long)]
    discretization: Option<Discretization>,
    #[arg(long)]
    score_threshold: Option<f64>,
    #[arg(long)]
    lpm_k: Option<usize>,
    #[arg(long)]
    lpm_lambda: Option<f64>,
    #[arg(long)]
    min_pooled_matches: Option<usize>,
    #[arg(long)]
    min_cells: Option<usize>,
    /// Comma-separated features for node affinity.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Run the coarse stage on super-cells of this grid size, μm.
    #[arg(long)]
    supercell_grid: Option<f64>,
}

impl AlignArgs {
    fn resolve(&self) -> Result<AlignmentConfig> {
        let mut c: AlignmentConfig = match &self.config {
            Some(p) => io::read_json(p)?,
            None => AlignmentConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    c.$($field)+ = v;
                }
            };
        }
        set!(outlier_weight => cpd.outlier_weight);
        set!(max_iterations => cpd.max_iterations);
        set!(tolerance => cpd.tolerance);
        set!(kde_bandwidth => kde_bandwidth);
        set!(density_gate => density_gate);
        set!(window_count => window_count);
        set!(src_window => src_window);
        set!(tgt_window => tgt_window);
        set!(edge_threshold => edge_threshold);
        set!(sigma_feature => matcher.affinity.sigma_feature);
        set!(sigma_edge => matcher.affinity.sigma_edge);
        set!(position_cutoff => matcher.affinity.position_cutoff);
        set!(rrwm_alpha => matcher.rrwm.alpha);
        set!(rrwm_beta => matcher.rrwm.beta);
        set!(rrwm_max_iter => matcher.rrwm.max_iter);
        set!(discretization => matcher.discretization);
        set!(score_threshold => matcher.score_threshold);
        set!(lpm_k => lpm.k);
        set!(lpm_lambda => lpm.lambda);
        set!(min_pooled_matches => min_pooled_matches);
        set!(min_cells => min_cells);
        if let Some(m) = self.max_points {
            c.cpd.max_points = (m > 0).then_some(m);
        }
        if let Some(s) = self.sigma_position {
            c.matcher.affinity.sigma_position = (s > 0.0).then_some(s);
        }
        if let Some(f) = &self.features {
            c.features = Some(f.clone());
        }
        if let Some(g) = self.supercell_grid {
            c.supercell = Some(SupercellConfig { grid_size: g });
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    landmarks: PathBuf,
    estimated: PathBuf,
    /// Ground-truth transform; fitted rigidly to the landmarks when absent.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Also write report.json and manifest.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Preset {
    Default,
    Restained,
    Serial,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    extent: Option<f64>,
    /// Parent clusters; 0 gives a uniform pattern.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    cluster_sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta_deg: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    dx: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    dy: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    spurious: Option<f64>,
    #[arg(long)]
    feature_noise: Option<f64>,
    /// Truth pairs held out of both tables as landmarks.
    #[arg(long, default_value_t = 8)]
    landmarks: usize,
}

impl SynthArgs {
    fn resolve(&self) -> Result<SynthScenario> {
        let mut s = match self.preset {
            Preset::Default => SynthScenario {
                seed: self.seed,
                ..SynthScenario::default()
            },
            Preset::Restained => SynthScenario::restained_like(self.seed),
            Preset::Serial => SynthScenario::serial_like(self.seed),
        };
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = self.$flag {
                    s.$field = v;
                }
            };
        }
        set!(n_points => n_points);
        set!(extent => extent);
        set!(clusters => cluster_count);
        set!(cluster_sigma => cluster_sigma);
        set!(jitter => jitter_sigma);
        set!(dropout => dropout_rate);
        set!(spurious => spurious_rate);
        set!(feature_noise => feature_noise);
        if self.theta_deg.is_some() || self.dx.is_some() || self.dy.is_some() {
            let t = s.transform;
            s.transform = RigidTransform::new(
                self.theta_deg.map_or(t.theta(), f64::to_radians),
                t.scale(),
                self.dx.unwrap_or(t.dx()),
                self.dy.unwrap_or(t.dy()),
            )?;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
struct ConcordanceArgs {
    source: PathBuf,
    target: PathBuf,
    /// Transform mapping source cells into the target frame.
    transform: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    /// Pairing radius, μm; defaults to half the target's median
    /// nearest-neighbour distance.
    #[arg(long)]
    radius: Option<f64>,
    /// Grid size for regional composition maps, μm.
    #[arg(long, requires = "label")]
    grid_size: Option<f64>,
    /// Class label counted as positive in regional maps.
    #[arg(long, requires = "grid_size")]
    label: Option<String>,
}

#[derive(Debug, Args)]
struct SupercellArgs {
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    grid_size: f64,
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Output directory; defaults to the manifest's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A fully resolved command as recorded in the manifest. Input paths are
/// absolute; the output directory is not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Invocation {
    Align {
        source: PathBuf,
        target: PathBuf,
        source_schema: SchemaConfig,
        target_schema: SchemaConfig,
        config: AlignmentConfig,
        seed: u64,
    },
    Eval {
        landmarks: PathBuf,
        estimated: PathBuf,
        gt: Option<PathBuf>,
    },
    Synth {
        scenario: SynthScenario,
        landmarks: usize,
    },
    Concordance {
        source: PathBuf,
        target: PathBuf,
        transform: PathBuf,
        source_schema: SchemaConfig,
        target_schema: SchemaConfig,
        radius: Option<f64>,
        regional: Option<(f64, String)>,
    },
    Supercell {
        input: PathBuf,
        schema: SchemaConfig,
        grid_size: f64,
    },
}

impl Invocation {
    fn inputs(&self) -> Vec<&Path> {
        match self {
            Invocation::Align { source, target, .. } => vec![source, target],
            Invocation::Eval {
                landmarks,
                estimated,
                gt,
            } => {
                let mut v: Vec<&Path> = vec![landmarks, estimated];
                v.extend(gt.as_deref());
                v
            }
            Invocation::Synth { .. } => vec![],
            Invocation::Concordance {
                source,
                target,
                transform,
                ..
            } => vec![source, target, transform],
            Invocation::Supercell { input, .. } => vec![input],
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Align { seed, .. } => Some(*seed),
            Invocation::Synth { scenario, .. } => Some(scenario.seed),
            _ => None,
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| Error::io(p, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got `{raw}`"
        ))
    })?;
    // A pool may already exist when called more than once in one process.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match configure_threads().and_then(|_| dispatch(cli.command, argv)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(command: Command, argv: Vec<String>) -> Result<i32> {
    let (inv, out) = match command {
        Command::Align(a) => {
            let (source_schema, target_schema) = a.schema.resolve()?;
            let inv = Invocation::Align {
                source: absolute(&a.source)?,
                target: absolute(&a.target)?,
                source_schema,
                target_schema,
                config: a.resolve()?,
                seed: a.seed,
            };
            (inv, Some(a.out))
        }
        Command::Eval(a) => {
            let inv = Invocation::Eval {
                landmarks: absolute(&a.landmarks)?,
                estimated: absolute(&a.estimated)?,
                gt: a.gt.as_deref().map(absolute).transpose()?,
            };
            (inv, a.out)
        }
        Command::Synth(a) => (
            Invocation::Synth {
                scenario: a.resolve()?,
                landmarks: a.landmarks,
            },
            Some(a.out),
        ),
        Command::Concordance(a) => {
            let (source_schema, target_schema) = a.schema.resolve()?;
            let inv = Invocation::Concordance {
                source: absolute(&a.source)?,
                target: absolute(&a.target)?,
                transform: absolute(&a.transform)?,
                source_schema,
                target_schema,
                radius: a.radius,
                regional: a.grid_size.zip(a.label),
            };
            (inv, Some(a.out))
        }
        Command::Supercell(a) => {
            let schema = a
                .schema
                .as_deref()
                .map(SchemaConfig::from_json_file)
                .transpose()?
                .unwrap_or_default();
            let inv = Invocation::Supercell {
                input: absolute(&a.input)?,
                schema,
                grid_size: a.grid_size,
            };
            (inv, Some(a.out))
        }
        Command::Replay(a) => {
            let m: RunManifest = io::read_json(&a.manifest)?;
            manifest::verify_inputs(&m.inputs)?;
            let out = match a.out {
                Some(o) => o,
                None => a
                    .manifest
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_default(),
            };
            (m.invocation, Some(out))
        }
    };
    execute(inv, out.as_deref(), argv)
}

/// Runs a resolved invocation, writing outputs and a manifest under `out`.
fn execute(inv: Invocation, out: Option<&Path>, argv: Vec<String>) -> Result<i32> {
    let started = manifest::now_ms();
    let inputs = manifest::digest_inputs(&inv.inputs())?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    let code = match &inv {
        Invocation::Align {
            source,
            target,
            source_schema,
            target_schema,
            config,
            seed,
        } => cmd_align(
            source,
            target,
            source_schema,
            target_schema,
            config,
            *seed,
            out.unwrap(),
        )?,
        Invocation::Eval {
            landmarks,
            estimated,
            gt,
        } => cmd_eval(landmarks, estimated, gt.as_deref(), out)?,
        Invocation::Synth {
            scenario,
            landmarks,
        } => cmd_synth(scenario, *landmarks, out.unwrap())?,
        Invocation::Concordance {
            source,
            target,
            transform,
            source_schema,
            target_schema,
            radius,
            regional,
        } => cmd_concordance(
            source,
            target,
            transform,
            source_schema,
            target_schema,
            *radius,
            regional.as_ref(),
            out.unwrap(),
        )?,
        Invocation::Supercell {
            input,
            schema,
            grid_size,
        } => cmd_supercell(input, schema, *grid_size, out.unwrap())?,
    };
    if let Some(dir) = out {
        let m = RunManifest {
            tool: "cellalign".into(),
            version: crate::VERSION.into(),
            argv,
            seed: inv.seed(),
            rng: synth::RNG_ALGORITHM.into(),
            inputs,
            invocation: inv,
            started_unix_ms: started,
            finished_unix_ms: manifest::now_ms(),
        };
        io::write_json(&m, dir.join("manifest.json"))?;
    }
    Ok(code)
}

#[derive(Serialize)]
struct AlignDiagnostics<'a> {
    coarse_only: bool,
    #[serde(flatten)]
    diagnostics: &'a Diagnostics,
}

fn cmd_align(
    source: &Path,
    target: &Path,
    source_schema: &SchemaConfig,
    target_schema: &SchemaConfig,
    config: &AlignmentConfig,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    let src = io::read_cell_table(source, source_schema)?;
    let tgt = io::read_cell_table(target, target_schema)?;
    let result = if config.supercell.is_some() {
        pipeline::align_large(&src, &tgt, config, seed)?
    } else {
        pipeline::align(&src, &tgt, config, seed)?
    };
    io::write_json(&result.coarse, out.join("coarse.json"))?;
    io::write_json(&result.refined, out.join("refined.json"))?;
    io::write_matches(&result.matches, out.join("matches.csv"))?;
    io::write_json(
        &AlignDiagnostics {
            coarse_only: result.coarse_only,
            diagnostics: &result.diagnostics,
        },
        out.join("diagnostics.json"),
    )?;
    Ok(if result.coarse_only {
        EXIT_COARSE_ONLY
    } else {
        EXIT_OK
    })
}

fn cmd_eval(
    landmarks: &Path,
    estimated: &Path,
    gt: Option<&Path>,
    out: Option<&Path>,
) -> Result<i32> {
    let lm: LandmarkSet = io::read_landmarks(landmarks)?;
    let est: Transform = io::read_json(estimated)?;
    let gt: Transform = match gt {
        Some(p) => io::read_json(p)?,
        None => fit_rigid(&CorrespondenceSet::from_landmarks(&lm), false)?.into(),
    };
    let report = evaluation::evaluate(&lm, &est, &gt)?;
    let text = serde_json::to_string_pretty(&report)?;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    if let Some(dir) = out {
        io::write_json(&report, dir.join("report.json"))?;
    }
    Ok(EXIT_OK)
}

fn cmd_synth(scenario: &SynthScenario, landmarks: usize, out: &Path) -> Result<i32> {
    let full = synth::generate(scenario)?;
    let (data, lm) = if landmarks > 0 {
        let (rest, lm) = full.hold_out_landmarks(landmarks, scenario.seed)?;
        (rest, Some(lm))
    } else {
        (full, None)
    };
    io::write_cell_table(&data.source, out.join("source.csv"))?;
    io::write_cell_table(&data.target, out.join("target.csv"))?;
    io::write_json(&data.truth_transform, out.join("truth_transform.json"))?;
    let truth_path = out.join("truth.csv");
    let mut wtr = csv::Writer::from_path(&truth_path).map_err(|e| csv_err(e, &truth_path))?;
    wtr.write_record(["src_id", "tgt_id"])
        .map_err(|e| csv_err(e, &truth_path))?;
    for (s, t) in &data.truth {
        wtr.write_record([s, t])
            .map_err(|e| csv_err(e, &truth_path))?;
    }
    wtr.flush().map_err(|e| Error::io(&truth_path, e))?;
    if let Some(lm) = lm {
        io::write_landmarks(&lm, out.join("landmarks.csv"))?;
    }
    Ok(EXIT_OK)
}

fn csv_err(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

/// Maps every source cell through `t`.
fn map_table(table: &CellTable, t: &Transform) -> CellTable {
    table.map_positions(|p| t.apply(p))
}

/// Lowercase alphanumerics and underscores only, for file names.
fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_concordance(
    source: &Path,
    target: &Path,
    transform: &Path,
    source_schema: &SchemaConfig,
    target_schema: &SchemaConfig,
    radius: Option<f64>,
    regional: Option<&(f64, String)>,
    out: &Path,
) -> Result<i32> {
    let src = io::read_cell_table(source, source_schema)?;
    let tgt = io::read_cell_table(target, target_schema)?;
    let t: Transform = io::read_json(transform)?;
    let mapped = map_table(&src, &t);
    let radius = match radius {
        Some(r) => r,
        None => evaluation::default_pairing_radius(&tgt)?,
    };
    let report = evaluation::feature_concordance(&mapped, &tgt, radius)?;
    io::write_json(&report, out.join("concordance.json"))?;

    let pairing = evaluation::nearest_pairing(&mapped, &tgt, radius)?;
    for (feature, values) in evaluation::paired_feature_values(&pairing, &mapped, &tgt) {
        let mut s = String::from("source,target\n");
        for (a, b) in values {
            s.push_str(&format!("{a},{b}\n"));
        }
        write_text(
            &out.join(format!("scatter_{}.csv", file_stem(&feature))),
            &s,
        )?;
    }

    if let Some((grid, label)) = regional {
        let a = evaluation::regional_composition(&mapped, *grid, label)?;
        let b = evaluation::regional_composition(&tgt, *grid, label)?;
        let map = evaluation::regional_concordance(&a.map, &b.map)?;
        let mut s = String::from("ix,iy,x0,y0,source_fraction,target_fraction,concordance\n");
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for cy in 0..map.ny {
            for cx in 0..map.nx {
                let (ix, iy) = (map.ix0 + cx as i64, map.iy0 + cy as i64);
                let v = map.values[cy * map.nx + cx];
                let (pa, pb) = (a.map.get(ix, iy), b.map.get(ix, iy));
                if v.is_none() && pa.is_none() && pb.is_none() {
                    continue;
                }
                s.push_str(&format!(
                    "{ix},{iy},{},{},{},{},{}\n",
                    ix as f64 * grid,
                    iy as f64 * grid,
                    cell(pa),
                    cell(pb),
                    cell(v)
                ));
            }
        }
        write_text(&out.join("regional.csv"), &s)?;
        let title = format!("{label}: regional concordance, {grid} μm grid");
        write_text(&out.join("regional.svg"), &svg::heatmap(&map, &title))?;
    }
    Ok(EXIT_OK)
}

fn cmd_supercell(input: &Path, schema: &SchemaConfig, grid_size: f64, out: &Path) -> Result<i32> {
    let table = io::read_cell_table(input, schema)?;
    let cells = pipeline::supercell_cluster(&table.positions(), grid_size)?;
    let path = out.join("supercells.csv");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut s = String::from("x,y,weight\n");
    for c in &cells {
        s.push_str(&format!("{},{},{}\n", c.centroid.x, c.centroid.y, c.weight));
    }
    f.write_all(s.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "cellalign",
            "align",
            "a.csv",
            "b.csv",
            "--out",
            "o",
            "--window-count",
            "3",
            "--sigma-position",
            "0",
            "--max-points",
            "0",
            "--discretization",
            "sinkhorn-greedy",
            "--features",
            "area,solidity",
        ])
        .unwrap();
        let Command::Align(a) = cli.command else {
            panic!()
        };
        let c = a.resolve().unwrap();
        assert_eq!(c.window_count, 3);
        assert_eq!(c.matcher.affinity.sigma_position, None);
        assert_eq!(c.cpd.max_points, None);
        assert_eq!(c.matcher.discretization, Discretization::SinkhornGreedy);
        assert_eq!(c.features, Some(vec!["area".into(), "solidity".into()]));
        assert_eq!(c.src_window, AlignmentConfig::default().src_window);
    }

    #[test]
    fn invalid_flag_is_config_error() {
        let cli = Cli::try_parse_from([
            "cellalign",
            "align",
            "a",
            "b",
            "--out",
            "o",
            "--density-gate",
            "2",
        ])
        .unwrap();
        let Command::Align(a) = cli.command else {
            panic!()
        };
        assert!(matches!(a.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn invocation_round_trips() {
        let inv = Invocation::Align {
            source: "/a".into(),
            target: "/b".into(),
            source_schema: SchemaConfig::default(),
            target_schema: SchemaConfig::default(),
            config: AlignmentConfig::default(),
            seed: 7,
        };
        let text = serde_json::to_string(&inv).unwrap();
        assert!(text.starts_with(r#"{"command":"align""#));
        assert_eq!(serde_json::from_str::<Invocation>(&text).unwrap(), inv);
    }

    #[test]
    fn synth_overrides() {
        let cli = Cli::try_parse_from([
            "cellalign",
            "synth",
            "--out",
            "o",
            "--preset",
            "serial",
            "--seed",
            "4",
            "--theta-deg",
            "-5",
            "--n-points",
            "300",
        ])
        .unwrap();
        let Command::Synth(a) = cli.command else {
            panic!()
        };
        let s = a.resolve().unwrap();
        assert_eq!(s.seed, 4);
        assert_eq!(s.n_points, 300);
        assert_eq!(s.jitter_sigma, 3.0);
        assert!((s.transform.theta_degrees() + 5.0).abs() < 1e-12);
        assert_eq!(s.transform.dx(), 30.0);
    }

    #[test]
    fn bad_arguments_exit_one() {
        assert_eq!(run(["cellalign", "align"]), EXIT_ERROR);
        assert_eq!(run(["cellalign", "--version"]), EXIT_OK);
    }
}

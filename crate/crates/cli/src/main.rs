use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use chamberflow::acceptance::{self, Scale, CRITERIA};
use chamberflow::decomp::{cartan, iwasawa, radial_component};
use chamberflow::diffusion::{exit_histogram, simulate, DiffusionConfig, DEFAULT_STEP_LENGTH};
use chamberflow::heatkernel::flight_density_grid_with_workers;
use chamberflow::lamination::{
    all_test_functions, build_lift, invariance_deficit, parse_test_element, LiftedSample,
    LiftedSampleSet, QuotientPoint, SchottkyGroup, TEST_FUNCTIONS_VERSION,
};
use chamberflow::parallel::default_workers;
use chamberflow::{build_root_system, ChamberVector, Error, GroupElement, GroupId};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "chamberflow", version, about = "Heat kernels, diffusions and lifted measures on SL(2,R) and SL(3,R)")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Root system, Weyl vector and Weyl group order as JSON.
    Roots {
        #[arg(long)]
        group: GroupId,
        #[command(flatten)]
        out: Output,
    },
    /// Iwasawa and Cartan factorizations of a matrix given row-major.
    Decomp {
        #[arg(long)]
        group: GroupId,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        matrix: Vec<f64>,
        #[command(flatten)]
        out: Output,
    },
    /// Radial flight density on the chamber grid.
    Kernel {
        #[arg(long)]
        group: GroupId,
        #[arg(long)]
        t: f64,
        /// Grid box in pairing coordinates, one bound per simple root.
        #[arg(long = "box", value_delimiter = ',')]
        box_max: Option<Vec<f64>>,
        #[arg(long)]
        step: Option<f64>,
        #[command(flatten)]
        out: Output,
    },
    /// Shift distance, slab mass and concentration over a list of times.
    Decay {
        #[arg(long)]
        group: GroupId,
        #[arg(long, value_delimiter = ',', required = true)]
        t: Vec<f64>,
        /// `rho` or chamber coordinates separated by commas.
        #[arg(long, default_value = "rho", allow_hyphen_values = true)]
        h0: String,
        #[arg(long, default_value_t = 0.2)]
        eps: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Per-path radial coordinates of simulated Brownian endpoints.
    Simulate {
        #[command(flatten)]
        walk: Walk,
        #[command(flatten)]
        out: Output,
    },
    /// Exit-direction histogram on the boundary circle.
    Exitdirs {
        #[command(flatten)]
        walk: Walk,
        #[arg(long, default_value_t = 36)]
        bins: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Lifted Krylov-Bogolyubov samples on the Schottky quotient, as JSONL.
    Lift {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "schottky-a")]
        preset: String,
        #[arg(long, default_value_t = DEFAULT_STEP_LENGTH)]
        step: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Invariance deficits of a lift under a right translation.
    Invariance {
        #[arg(long = "in")]
        input: PathBuf,
        /// `a:s`, `n:s` or `k:theta`.
        #[arg(long)]
        g: String,
        #[arg(long, default_value = "schottky-a")]
        preset: String,
        #[command(flatten)]
        out: Output,
    },
    /// Runs the acceptance suite and prints a pass/fail table.
    All {
        #[arg(long, default_value = "full", value_parser = ["full", "reduced"])]
        scale: String,
        /// Subset of criteria, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<usize>>,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Args, Debug)]
struct Walk {
    #[arg(long, default_value = "sl2")]
    group: GroupId,
    #[arg(long)]
    t: f64,
    #[arg(long)]
    paths: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEP_LENGTH)]
    step: f64,
}

#[derive(Args, Debug)]
struct Output {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical { .. } => Failure::Numerical(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

/// Everything that identifies a run: written as `#` lines ahead of every output.
struct RunManifest {
    command_line: String,
    seed: Option<u64>,
    input_hash: String,
    anchor: &'static str,
    outputs: Vec<String>,
}

impl RunManifest {
    fn header(&self) -> String {
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        format!(
            "# chamberflow {}\n# command: {}\n# seed: {seed}\n# inputs: {}\n# anchor: {}\n# outputs: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.command_line,
            self.input_hash,
            self.anchor,
            if self.outputs.is_empty() { "stdout".to_string() } else { self.outputs.join(",") },
        )
    }
}

/// `sha256:` digest of the inputs framed like a git blob.
fn content_hash(parts: &[&[u8]]) -> String {
    let len: usize = parts.iter().map(|p| p.len()).sum();
    let mut h = Sha256::new();
    h.update(format!("blob {len}\0").as_bytes());
    for p in parts {
        h.update(p);
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reads `key=value` lines (blank lines and `#` comments skipped).
fn config_args(path: &str) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("config {path}: {e}")))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("config {path}:{}: expected key=value", i + 1)))?;
        out.push(format!("--{}", k.trim()));
        out.push(v.trim().to_string());
    }
    Ok(out)
}

/// Splices config-file flags between the subcommand and the command-line
/// flags, so the command line takes precedence.
fn merge_config(argv: Vec<String>) -> Result<Vec<String>, Failure> {
    let mut rest = Vec::new();
    let mut config = None;
    let mut it = argv.into_iter();
    let program = it.next().unwrap_or_else(|| "chamberflow".into());
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().ok_or_else(|| Failure::Usage("--config needs a path".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let mut merged = vec![program];
    match (config, rest.first()) {
        (Some(path), Some(sub)) if !sub.starts_with('-') => {
            merged.push(sub.clone());
            merged.extend(config_args(&path)?);
            merged.extend(rest.into_iter().skip(1));
        }
        _ => merged.extend(rest),
    }
    Ok(merged)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let command_line = argv[1..].join(" ");
    let merged = match merge_config(argv) {
        Ok(m) => m,
        Err(f) => return report(f),
    };
    let cli = match Cli::try_parse_from(&merged) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let effective = merged[1..].join(" ");
    match run(cli.command, command_line, effective) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    match f {
        Failure::Usage(m) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Failure::Numerical(m) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn emit(out: &Output, manifest: RunManifest, body: &str) -> Result<(), Failure> {
    let text = format!("{}{body}", manifest.header());
    match &out.out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn manifest(command_line: &str, effective: &str, out: &Output, seed: Option<u64>, anchor: &'static str, inputs: &[&[u8]]) -> RunManifest {
    let mut parts: Vec<&[u8]> = vec![effective.as_bytes()];
    parts.extend_from_slice(inputs);
    RunManifest {
        command_line: format!("chamberflow {command_line}"),
        seed,
        input_hash: content_hash(&parts),
        anchor,
        outputs: out.out.iter().map(|p| p.display().to_string()).collect(),
    }
}

fn csv_body(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn run(command: Command, command_line: String, effective: String) -> Result<(), Failure> {
    let workers = default_workers();
    let cl = command_line.as_str();
    let ef = effective.as_str();
    match command {
        Command::Roots { group, out } => {
            let rs = build_root_system(group);
            let roots: Vec<Value> = rs
                .positive_roots
                .iter()
                .map(|r| json!({"functional": r.functional, "multiplicity": r.multiplicity, "coroot": r.coroot().coords()}))
                .collect();
            let body = json!({
                "group": group.as_str(),
                "rank": rs.rank,
                "positive_roots": roots,
                "simple_roots": rs.simple_roots,
                "weyl_vector": rs.weyl_vector.coords(),
                "weyl_group_order": rs.weyl_group_order,
            });
            emit(&out, manifest(cl, ef, &out, None, "root-data", &[]), &pretty(&body))
        }
        Command::Decomp { group, matrix, out } => {
            let g = GroupElement::from_rows(group, &matrix)?;
            let nak = iwasawa(&g)?;
            let kak = cartan(&g)?;
            let h = radial_component(&g)?;
            let body = json!({
                "input": g.rows(),
                "iwasawa": {"n": nak.n_part.rows(), "a": nak.a_part.rows(), "k": nak.k_part.rows(),
                            "round_trip_error": nak.product().max_abs_diff(&g)},
                "cartan": {"k1": kak.k1.rows(), "a": kak.a_part.rows(), "k2": kak.k2.rows(),
                           "round_trip_error": kak.product().max_abs_diff(&g)},
                "radial_component": h.coords(),
            });
            emit(&out, manifest(cl, ef, &out, None, "decompositions", &[]), &pretty(&body))
        }
        Command::Kernel { group, t, box_max, step, out } => {
            let rs = build_root_system(group);
            let grid = flight_density_grid_with_workers(t, &rs, box_max.as_deref(), step, workers)?;
            let mut header: Vec<String> = (1..=rs.rank).map(|j| format!("y{j}")).collect();
            header.push("density".into());
            let rows = (0..grid.values.len()).map(|k| {
                let mut r: Vec<String> = grid.cell_center_pairing(k).into_iter().map(float).collect();
                r.push(float(grid.values[k]));
                r
            });
            let body = csv_body(&header, rows)?;
            emit(&out, manifest(cl, ef, &out, None, "heat-kernel-bound", &[]), &body)
        }
        Command::Decay { group, t, h0, eps, out } => {
            let rs = build_root_system(group);
            let h0 = if h0 == "rho" {
                rs.weyl_vector.clone()
            } else {
                let coords = h0
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| Failure::Usage(format!("--h0 {h0:?} is neither rho nor a coordinate list")))?;
                ChamberVector::new(coords)?
            };
            let mut header: Vec<String> = [
                "t",
                "shift_l1",
                "shift_rounding",
                "slab_union_mass",
                "concentration_fraction",
                "total_mass",
                "boundary_mass",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            header.extend((1..=rs.rank).map(|j| format!("argmax_y{j}")));
            let mut rows = Vec::new();
            for &ti in &t {
                let grid = flight_density_grid_with_workers(ti, &rs, None, None, workers)?;
                let shift = grid.shift_l1_distance(&h0)?;
                let mut r = vec![
                    float(ti),
                    float(shift.value),
                    float(shift.rounding),
                    float(grid.slab_union_mass(&h0)?),
                    float(grid.concentration_fraction(eps)),
                    float(grid.total_mass()),
                    float(grid.boundary_mass()),
                ];
                r.extend(grid.argmax_pairing().into_iter().map(float));
                rows.push(r);
            }
            let body = csv_body(&header, rows)?;
            emit(&out, manifest(cl, ef, &out, None, "decay", &[]), &body)
        }
        Command::Simulate { walk, out } => {
            let cfg = DiffusionConfig::new(walk.group, walk.step, walk.seed, walk.paths, walk.t)?;
            let set = simulate(&cfg, workers)?;
            let radial = set.radial_components()?;
            let n = walk.group.matrix_dim();
            let mut header = vec!["path".to_string(), "elapsed".to_string()];
            header.extend((1..=n).map(|i| format!("h{i}")));
            let rows = radial.iter().enumerate().map(|(i, h)| {
                let mut r = vec![set.substreams[i].to_string(), float(set.elapsed[i])];
                r.extend(h.iter().copied().map(float));
                r
            });
            let body = csv_body(&header, rows)?;
            emit(&out, manifest(cl, ef, &out, Some(walk.seed), "krylov-bogolyubov", &[]), &body)
        }
        Command::Exitdirs { walk, bins, out } => {
            let cfg = DiffusionConfig::new(walk.group, walk.step, walk.seed, walk.paths, walk.t)?;
            let hist = exit_histogram(&simulate(&cfg, workers)?, bins)?;
            let width = std::f64::consts::TAU / bins as f64;
            let header: Vec<String> = ["bin", "angle_lo", "angle_hi", "count"].iter().map(|s| s.to_string()).collect();
            let rows = hist.counts.iter().enumerate().map(|(i, c)| {
                vec![i.to_string(), float(i as f64 * width), float((i + 1) as f64 * width), c.to_string()]
            });
            let mut body = csv_body(&header, rows)?;
            body = format!(
                "# walls: {}\n# max_deviation_sd: {}\n{body}",
                hist.walls,
                float(hist.max_deviation_sd)
            );
            emit(&out, manifest(cl, ef, &out, Some(walk.seed), "boundary-convergence", &[]), &body)
        }
        Command::Lift { n, count, seed, preset, step, out } => {
            let gamma = SchottkyGroup::preset(&preset)?;
            let cfg = DiffusionConfig::new(GroupId::Sl2, step, seed, count, n as f64)?;
            let set = build_lift(&cfg, &gamma, n, count, workers)?;
            let mut body = String::new();
            for s in &set.samples {
                let line = json!({
                    "representative": s.point.representative.rows(),
                    "word": s.point.word,
                    "mark": s.mark.angle(),
                    "time": s.time,
                });
                body.push_str(&line.to_string());
                body.push('\n');
            }
            emit(&out, manifest(cl, ef, &out, Some(seed), "lift", &[]), &body)
        }
        Command::Invariance { input, g, preset, out } => {
            let gamma = SchottkyGroup::preset(&preset)?;
            let element = parse_test_element(&g)?;
            let bytes = fs::read(&input).map_err(|e| Failure::Usage(format!("{}: {e}", input.display())))?;
            let set = read_lift(&bytes, &preset)?;
            let fs_all = all_test_functions();
            let d = invariance_deficit(&set, &element, &gamma, &fs_all, workers)?;
            let header: Vec<String> = ["test_element", "function", "deficit"].iter().map(|s| s.to_string()).collect();
            let mut rows: Vec<Vec<String>> = d
                .per_function
                .iter()
                .zip(&fs_all)
                .map(|(v, f)| vec![g.clone(), format!("{TEST_FUNCTIONS_VERSION}/{f}"), float(*v)])
                .collect();
            rows.push(vec![g.clone(), "max".into(), float(d.max)]);
            let body = csv_body(&header, rows)?;
            emit(&out, manifest(cl, ef, &out, None, "invariance", &[&bytes]), &body)
        }
        Command::All { scale, criteria, out } => {
            let scale = if scale == "full" { Scale::Full } else { Scale::Reduced };
            let ids = criteria.unwrap_or_else(|| (1..=CRITERIA).collect());
            if let Some(bad) = ids.iter().find(|&&i| i == 0 || i > CRITERIA) {
                return Err(Failure::Usage(format!("no criterion {bad}")));
            }
            let mut body = String::new();
            let mut passed = 0;
            for &id in &ids {
                let r = acceptance::run(id, scale, workers)?;
                passed += r.passed as usize;
                let line = r.line();
                if out.out.is_some() {
                    eprintln!("{line}");
                }
                body.push_str(&line);
                body.push('\n');
            }
            body.push_str(&format!("{passed}/{} criteria passed\n", ids.len()));
            emit(&out, manifest(cl, ef, &out, Some(acceptance::ACCEPTANCE_SEED), "acceptance", &[]), &body)
        }
    }
}

/// Parses JSONL written by `lift`; `#` lines are skipped.
fn read_lift(bytes: &[u8], preset: &str) -> Result<LiftedSampleSet, Failure> {
    let text = std::str::from_utf8(bytes).map_err(|_| Failure::Usage("input is not utf-8".into()))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Failure::Usage(format!("line {}: {what}", i + 1));
        let v: Value = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
        let rows: Vec<f64> = v["representative"]
            .as_array()
            .ok_or_else(|| bad("missing representative"))?
            .iter()
            .flat_map(|r| r.as_array().cloned().unwrap_or_default())
            .map(|x| x.as_f64().ok_or_else(|| bad("non-numeric matrix entry")))
            .collect::<Result<_, _>>()?;
        let representative = GroupElement::from_rows(GroupId::Sl2, &rows)?;
        let word = v["word"].as_str().ok_or_else(|| bad("missing word"))?.to_string();
        let mark = v["mark"].as_f64().ok_or_else(|| bad("missing mark"))?;
        let time = v["time"].as_u64().unwrap_or(0);
        samples.push(LiftedSample {
            point: QuotientPoint { representative, word },
            mark: chamberflow::diffusion::BoundaryPoint::new(mark)?,
            time,
        });
    }
    if samples.is_empty() {
        return Err(Failure::Usage("the input holds no samples".into()));
    }
    Ok(LiftedSampleSet {
        preset: preset.to_string(),
        n: 0,
        seed: 0,
        step_length: 0.0,
        initial_mark: f64::NAN,
        samples,
    })
}

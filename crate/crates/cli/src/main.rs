use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use svph_core::branches::{curve_class_check, pull_back_all, CentralCurve};
use svph_core::cones::{check_hypotheses, cone_parameters, working_cones};
use svph_core::spectral::{
    averaged_field, correlation_decay, eigenfunction_h1, factorization_error, hat_p_projection,
    linear_fit, orbit_srb, peripheral_spectrum, srb_density, ulam_correlation, weak_norm,
    x_constant_test, SrbMethod,
};
use svph_core::transfer::{fourier_matrix, ulam_matrix, FiberDensity, GridFunction};
use svph_core::transversality::{frak_n_grid, n0_estimate, n_count, sup_n_tilde};
use svph_core::{transfer::grid_points, MapSpec, Point2};

#[derive(Parser, Debug)]
#[command(
    name = "svph",
    version,
    about = "Numerical experiments on fast-slow partially hyperbolic torus maps"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// Map description in JSON.
    #[arg(long, global = true)]
    map: Option<PathBuf>,
    /// Directory receiving the outputs and the manifest.
    #[arg(long, global = true, default_value = "svph-out")]
    out: PathBuf,
    /// Grid resolution per axis; its meaning depends on the subcommand.
    #[arg(long, global = true, env = "SVPH_GRID")]
    grid: Option<usize>,
    /// Seed for every random number generator.
    #[arg(long, global = true, env = "SVPH_SEED", default_value_t = 20240601)]
    seed: u64,
    /// Cap on worker threads (0 lets the pool decide).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
enum Command {
    /// Hypothesis checker for the cone conditions.
    Check {
        #[arg(long, default_value_t = 5)]
        r: u32,
    },
    /// Cone apertures and hyperbolicity constants.
    Cones {
        #[arg(long, default_value_t = 5)]
        r: u32,
    },
    /// Pull back a central curve along every branch word of length n.
    Pullback {
        /// `vertical:X` or `sine:X,AMP`.
        #[arg(long, default_value = "vertical:0.3")]
        curve: String,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
    /// Transversality counts and the onset time.
    Transversality {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        n_max: usize,
        #[arg(long, value_delimiter = ',')]
        eps_list: Vec<f64>,
    },
    /// Leading eigenvalues of a discretised transfer operator.
    Spectrum {
        #[arg(long, value_enum, default_value_t = Discretisation::Ulam)]
        method: Discretisation,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 0.05)]
        delta_gap: f64,
    },
    /// SRB density by the Ulam and/or orbit routes.
    Srb {
        #[arg(long, value_enum, default_value_t = SrbRoute::Both)]
        method: SrbRoute,
        #[arg(long, default_value_t = 100_000_000)]
        steps: u64,
        #[arg(long, default_value_t = 64)]
        seeds: usize,
    },
    /// Decay of correlations for cos(2 pi theta) against itself.
    Correlations {
        #[arg(long, default_value_t = 30)]
        n_max: usize,
        #[arg(long, default_value_t = 20_000_000)]
        steps: u64,
        #[arg(long, default_value_t = 32)]
        seeds: usize,
    },
    /// Epsilon sweep of the factorisation, concentration and regularity diagnostics.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025")]
        eps_list: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        kw: usize,
    },
    /// Periodic-orbit test of whether omega is cohomologous to a constant.
    Xconst {
        #[arg(long, default_value_t = 6)]
        period: usize,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
enum Discretisation {
    Ulam,
    Fourier,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, PartialEq)]
enum SrbRoute {
    Ulam,
    Orbit,
    Both,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: Command,
    settings: Common,
    map_file: Option<String>,
    map_sha256: Option<String>,
    map: Value,
    defaults: Value,
    outputs: Vec<String>,
    wall_time_seconds: f64,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }
}

enum Verdict {
    Ok,
    HypothesisFailure,
}

fn load_map(path: &Option<PathBuf>) -> Result<(MapSpec, Option<String>, Option<String>)> {
    let Some(path) = path else {
        bail!("--map is required for this subcommand")
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read map file {}", path.display()))?;
    let map = MapSpec::from_json(&text)
        .with_context(|| format!("invalid map file {}", path.display()))?;
    let hash = Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
    Ok((map, Some(path.display().to_string()), Some(hash)))
}

fn grid_csv(h: &GridFunction, column: &str) -> String {
    let mut s = format!("x,theta,{column}\n");
    for k in 0..h.data.len() {
        let c = h.center(k);
        let _ = writeln!(s, "{},{},{}", c.x, c.theta, h.data[k]);
    }
    s
}

fn cos_theta(p: Point2) -> f64 {
    (std::f64::consts::TAU * p.theta).cos()
}

/// Decay rate of `C(n)` for `cos 2 pi theta` from Ulam powers, fitted where `|C(n)| > 1e-10 |C(0)|`.
fn ulam_rate(map: &MapSpec, h: &GridFunction) -> Result<f64> {
    let op = ulam_matrix(map, h.nx, h.nt)?;
    let c = ulam_correlation(&op, h, &cos_theta, &cos_theta, 60);
    let floor = 1e-10 * c[0].abs();
    let used: Vec<(f64, f64)> = (1..c.len())
        .take_while(|&n| c[n].abs() > floor)
        .map(|n| (n as f64, c[n].abs().ln()))
        .collect();
    if used.len() < 3 {
        return Ok(f64::NAN);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = used.into_iter().unzip();
    Ok(-linear_fit(&xs, &ys).0)
}

fn run(cli: &Cli, out: &mut Outputs) -> Result<(Verdict, Value, Value)> {
    let c = &cli.common;
    let (map, _, _) = load_map(&c.map)?;
    let mut verdict = Verdict::Ok;
    let defaults;
    let mut summary = json!({});
    match &cli.command {
        Command::Check { r } => {
            let grid = c.grid.unwrap_or(512);
            defaults = json!({"grid": grid, "r": r});
            let report = check_hypotheses(&map, *r, grid);
            if !report.structural_pass {
                verdict = Verdict::HypothesisFailure;
            }
            summary =
                json!({"structural_pass": report.structural_pass, "all_pass": report.all_pass});
            out.json("check.json", &report)?;
        }
        Command::Cones { r } => {
            let grid = c.grid.unwrap_or(512);
            defaults = json!({"grid": grid, "r": r});
            match (cone_parameters(&map, *r, grid), working_cones(&map, grid)) {
                (Ok((midpoint, constants)), Ok(working)) => {
                    out.json(
                        "cones.json",
                        &json!({"midpoint": midpoint, "working": working, "constants": constants}),
                    )?;
                }
                (a, b) => {
                    let msg = a
                        .err()
                        .map(|e| e.to_string())
                        .or(b.err().map(|e| e.to_string()))
                        .unwrap_or_default();
                    out.json("cones.json", &json!({"error": msg}))?;
                    verdict = Verdict::HypothesisFailure;
                }
            }
        }
        Command::Pullback { curve, n, samples } => {
            defaults = json!({"curve": curve, "n": n, "samples": samples});
            let gamma = CentralCurve::parse(curve, *samples)?;
            let cones = working_cones(&map, c.grid.unwrap_or(256))?;
            let pulled = pull_back_all(&map, &gamma, *n)?;
            let mut csv = String::from("word,t,x,dx,ddx\n");
            let mut classes = Vec::new();
            for pc in &pulled {
                let word: String = pc.word.iter().map(|d| d.to_string()).collect();
                for row in pc.curve.table() {
                    let _ = writeln!(csv, "{word},{},{},{},{}", row[0], row[1], row[2], row[3]);
                }
                let class = curve_class_check(&pc.curve, 1.0, 3, cones.chi_c);
                classes
                    .push(json!({"word": word, "max_residual": pc.max_residual, "class": class}));
            }
            out.write("pullback.csv", &csv)?;
            out.json("pullback.json", &classes)?;
            summary = json!({"curves": pulled.len()});
        }
        Command::Transversality { n, n_max, eps_list } => {
            let grid = c.grid.unwrap_or(16);
            defaults = json!({"grid": grid, "n": n, "n_max": n_max});
            let one = |m: &MapSpec| -> Result<Value> {
                let cones = working_cones(m, 256)?;
                let fiber = FiberDensity::for_map(m)?;
                let pts = grid_points(grid);
                let mut n_sup: f64 = 0.0;
                let mut witness = Value::Null;
                for &p in &pts {
                    let r = n_count(m, &cones, p, *n)?;
                    if r.value > n_sup {
                        n_sup = r.value;
                        witness = json!({"y": [p.x, p.theta], "argmax_slope": r.argmax});
                    }
                }
                let nt = sup_n_tilde(m, &cones, &pts, *n)?;
                let frak = frak_n_grid(m, &cones, &fiber, grid, *n)?;
                let onset = n0_estimate(m, &cones, *n_max, grid).ok();
                Ok(json!({
                    "epsilon": m.epsilon,
                    "N": n_sup,
                    "Ntilde": nt,
                    "frakN": frak,
                    "n0": onset.as_ref().map(|o| o.n0),
                    "N_argmax": witness,
                    "witnesses": onset.map(|o| o.witnesses.into_iter().map(|(p, a, b)| json!({"y": [p.x, p.theta], "word_a": a, "word_b": b})).collect::<Vec<_>>()),
                }))
            };
            let main = one(&map)?;
            summary = json!({"N": main["N"], "n0": main["n0"]});
            out.json("transversality.json", &main)?;
            if !eps_list.is_empty() {
                let mut csv = String::from("epsilon,N,Ntilde,frakN,n0\n");
                for &e in eps_list {
                    let v = one(&map.with_epsilon(e))?;
                    let n0 = v["n0"]
                        .as_u64()
                        .map(|x| x.to_string())
                        .unwrap_or_else(|| "NA".into());
                    let _ = writeln!(csv, "{e},{},{},{},{n0}", v["N"], v["Ntilde"], v["frakN"]);
                }
                out.write("transversality_sweep.csv", &csv)?;
            }
        }
        Command::Spectrum {
            method,
            k,
            delta_gap,
        } => {
            let report = match method {
                Discretisation::Ulam => {
                    let grid = c.grid.unwrap_or(128);
                    defaults =
                        json!({"grid": grid, "k": k, "delta_gap": delta_gap, "cesaro_terms": 200});
                    peripheral_spectrum(&ulam_matrix(&map, grid, grid)?, *k, *delta_gap, 200)?
                }
                Discretisation::Fourier => {
                    let kf = c.grid.unwrap_or(16);
                    defaults = json!({"fourier_k": kf, "k": k, "delta_gap": delta_gap, "cesaro_terms": 200});
                    peripheral_spectrum(&fourier_matrix(&map, kf, None)?, *k, *delta_gap, 200)?
                }
            };
            out.json("spectrum.json", &report.eigenvalues)?;
            out.json("spectrum_report.json", &report)?;
            summary = json!({"peripheral": report.peripheral.len(), "non_unique_warning": report.non_unique_warning});
        }
        Command::Srb {
            method,
            steps,
            seeds,
        } => {
            let grid = c.grid.unwrap_or(256);
            defaults = json!({"grid": grid, "steps": steps, "seeds": seeds, "burn_in": 1000, "ulam_tol": 1e-11});
            let ulam = if *method != SrbRoute::Orbit {
                Some(srb_density(&map, SrbMethod::ulam(), grid, grid)?)
            } else {
                None
            };
            let orbit = if *method != SrbRoute::Ulam {
                Some(orbit_srb(&map, *steps, *seeds, 1000, c.seed, grid, grid))
            } else {
                None
            };
            if let Some(h) = &ulam {
                out.write("srb_ulam.csv", &grid_csv(h, "h_ulam"))?;
            }
            if let Some(o) = &orbit {
                out.write("srb_orbit.csv", &grid_csv(&o.density, "h_orbit"))?;
            }
            summary = json!({
                "l1_distance": match (&ulam, &orbit) { (Some(a), Some(b)) => Some(a.l1_distance(&b.density)), _ => None },
                "non_unique_warning": orbit.as_ref().map(|o| o.non_unique_warning),
                "outlier_fraction": orbit.as_ref().map(|o| o.outlier_fraction),
            });
            out.json("srb.json", &summary)?;
        }
        Command::Correlations {
            n_max,
            steps,
            seeds,
        } => {
            defaults = json!({"n_max": n_max, "steps": steps, "seeds": seeds, "observable": "cos(2 pi theta)"});
            let r =
                correlation_decay(&map, &cos_theta, &cos_theta, *n_max, *steps, *seeds, c.seed)?;
            let mut csv = String::from("n,C,standard_error,noise_floor\n");
            for n in 0..=*n_max {
                let _ = writeln!(
                    csv,
                    "{n},{},{},{}",
                    r.c[n], r.standard_error[n], r.noise_floor[n]
                );
            }
            out.write("correlations.csv", &csv)?;
            summary = json!({"rate": r.rate, "r2": r.r2, "resolved": r.resolved});
            out.json("correlations.json", &summary)?;
        }
        Command::Sweep { eps_list, kw } => {
            let grid = c.grid.unwrap_or(256);
            defaults = json!({"grid": grid, "kw": kw, "n_theta": 512});
            let mut csv =
                String::from("epsilon,factorization_error,hatP_error,h1_norm,fitted_rate\n");
            let mut dat =
                String::from("# epsilon factorization_error hatP_error h1_norm fitted_rate\n");
            for &e in eps_list {
                let m = map.with_epsilon(e);
                let fiber = FiberDensity::for_map(&m)?;
                let h = srb_density(&m, SrbMethod::ulam(), grid, grid)?;
                let fe = factorization_error(&h, &fiber, *kw)?;
                let hp = match averaged_field(&m, &fiber, 512) {
                    Ok(field) => {
                        let p = hat_p_projection(&h, &field, &fiber);
                        let g = GridFunction {
                            nx: h.nx,
                            nt: h.nt,
                            data: h.data.iter().zip(&p.data).map(|(a, b)| a - b).collect(),
                        };
                        weak_norm(&g, *kw)?
                    }
                    Err(_) => f64::NAN,
                };
                let h1 = eigenfunction_h1(&h)?;
                let rate = ulam_rate(&m, &h)?;
                let _ = writeln!(csv, "{e},{fe},{hp},{h1},{rate}");
                let _ = writeln!(dat, "{e} {fe} {hp} {h1} {rate}");
            }
            out.write("sweep.csv", &csv)?;
            out.write("sweep.dat", &dat)?;
        }
        Command::Xconst { period, theta, tol } => {
            defaults = json!({"period": period, "theta": theta, "tol": tol});
            let r = x_constant_test(&map, *theta, *period, *tol)?;
            let verdict_text = if r.consistent {
                "consistent"
            } else {
                "not x-constant"
            };
            summary = json!({"verdict": verdict_text});
            out.json(
                "xconst.json",
                &json!({"verdict": verdict_text, "report": r}),
            )?;
        }
    }
    Ok((verdict, defaults, summary))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.common.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.common.threads)
            .build_global();
    }
    let start = Instant::now();
    let result = Outputs::new(&cli.common.out).and_then(|mut out| {
        let (verdict, defaults, summary) = run(&cli, &mut out)?;
        let (map, file, hash) = load_map(&cli.common.map)?;
        let manifest = RunManifest {
            tool: "svph",
            version: env!("CARGO_PKG_VERSION"),
            command: cli.command.clone(),
            settings: cli.common.clone(),
            map_file: file,
            map_sha256: hash,
            map: serde_json::to_value(&map)?,
            defaults,
            outputs: out.written.clone(),
            wall_time_seconds: start.elapsed().as_secs_f64(),
        };
        out.json("manifest.json", &manifest)?;
        println!("{}", serde_json::to_string(&summary)?);
        Ok(verdict)
    });
    match result {
        Ok(Verdict::Ok) => ExitCode::SUCCESS,
        Ok(Verdict::HypothesisFailure) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use galerkin_flow::benes::{relative_l2, GridSpec, MixtureInit};
use galerkin_flow::config::RunConfig;
use galerkin_flow::evaluator::Surrogate;
use galerkin_flow::kv::{parse_list, KvDoc};
use galerkin_flow::selftest;
use galerkin_flow::train::{log_line, train, LOG_HEADER};
use galerkin_flow::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Flow surrogates for SDE transition densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a checkpoint from a configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; defaults to `output.checkpoint` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-step CSV log; defaults to `output.log` from the config.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Dump the learned density on a rectangular grid.
    Grid {
        #[command(flatten)]
        query: Query,
        #[command(flatten)]
        grid: GridArgs,
        /// Add the closed-form density as an extra column.
        #[arg(long)]
        exact: bool,
    },
    /// Relative L2 error against the closed-form density.
    Error {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_parser = vector, allow_hyphen_values = true)]
        x0: Floats,
        #[arg(long, value_parser = vector, allow_hyphen_values = true)]
        t_list: Floats,
        #[command(flatten)]
        grid: GridArgs,
        /// Compare the closed form with itself; every row must read zero.
        #[arg(long)]
        exact_self_test: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples from the learned density.
    Sample {
        #[command(flatten)]
        query: Query,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convolve the learned kernel with a Gaussian-mixture initial law.
    Convolve {
        #[arg(long)]
        ckpt: PathBuf,
        /// Mixture document (`mixture.<k>.weight|mean|cov`); the built-in mixture if absent.
        #[arg(long)]
        mixture: Option<PathBuf>,
        #[arg(long)]
        t: f64,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 1750)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add the closed-form-kernel convolution as an extra column.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args)]
struct Query {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_parser = vector, allow_hyphen_values = true)]
    x0: Floats,
    #[arg(long)]
    t: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// `lo1,hi1,lo2,hi2`
    #[arg(long = "box", value_parser = vector, allow_hyphen_values = true, default_value = "-10,10,-10,10")]
    bounds: Floats,
    /// Nodes per axis, `n` or `n1,n2`.
    #[arg(long, value_parser = vector, allow_hyphen_values = true, default_value = "201")]
    n: Floats,
}

/// Comma-separated numbers.
#[derive(Clone, Debug)]
struct Floats(Vec<f64>);

impl std::ops::Deref for Floats {
    type Target = Vec<f64>;

    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

fn vector(raw: &str) -> std::result::Result<Floats, String> {
    parse_list(raw).map(Floats).map_err(|e| format!("`{raw}`: {e}"))
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec> {
        let b = &self.bounds;
        if b.len() != 4 {
            return Err(Error::Config(format!("--box needs 4 values, got {}", b.len())));
        }
        let count = |v: f64| -> Result<usize> {
            if v.fract() == 0.0 && (2.0..=1e5).contains(&v) {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("--n: bad node count {v}")))
            }
        };
        let n = match self.n.as_slice() {
            [a] => [count(*a)?; 2],
            [a, b] => [count(*a)?, count(*b)?],
            _ => return Err(Error::Config("--n takes one or two values".into())),
        };
        let g = GridSpec {
            lo: [b[0], b[2]],
            hi: [b[1], b[3]],
            n,
        };
        g.validate()?;
        Ok(g)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(out: Option<&Path>, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let name = out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let mut w = writer(out)?;
    let go = || -> io::Result<()> {
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()
    };
    go().map_err(|e| Error::io(name, e))
}

fn surrogate_for(path: &Path, x0: &[f64]) -> Result<Surrogate> {
    let s = Surrogate::load(path)?;
    if x0.len() != s.dim() {
        return Err(Error::Config(format!("--x0 has {} values, model dimension is {}", x0.len(), s.dim())));
    }
    Ok(s)
}

fn planar(s: &Surrogate) -> Result<()> {
    if s.dim() != 2 {
        return Err(Error::UnsupportedDimension(s.dim()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, log } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let cfg = RunConfig::parse(&text)?;
            let out = out
                .or_else(|| cfg.checkpoint_path.clone().map(PathBuf::from))
                .ok_or_else(|| Error::Config("no checkpoint path: pass --out or set output.checkpoint".into()))?;
            let log = log.or_else(|| cfg.log_path.clone().map(PathBuf::from));
            let mut lines = vec![LOG_HEADER.to_string()];
            let started = Instant::now();
            let ck = train(&cfg, |rec| {
                let line = log_line(rec);
                eprintln!("{line}");
                lines.push(line);
            })?;
            ck.save(&out)?;
            if let Some(log) = log {
                let mut body = lines.join("\n");
                body.push('\n');
                fs::write(&log, body).map_err(|e| Error::io(&log, e))?;
            }
            eprintln!(
                "wrote {} ({} rows, {} parameters) in {:.1}s",
                out.display(),
                ck.rows(),
                ck.cols(),
                started.elapsed().as_secs_f64()
            );
            Ok(())
        }
        Command::Grid { query, grid, exact } => {
            let s = surrogate_for(&query.ckpt, &query.x0)?;
            planar(&s)?;
            let g = grid.spec()?;
            let pts: Vec<Vec<f64>> = g.points().iter().map(|p| p.to_vec()).collect();
            let p = s.density_many(&pts, query.t, &query.x0)?;
            let e = if exact {
                Some(pts.iter().map(|x| s.exact(x, query.t, &query.x0)).collect::<Result<Vec<_>>>()?)
            } else {
                None
            };
            let header = if exact { "x1,x2,density,exact" } else { "x1,x2,density" };
            emit(
                query.out.as_deref(),
                header,
                pts.iter().enumerate().map(|(i, x)| {
                    let mut row = format!("{},{},{}", fmt(x[0]), fmt(x[1]), fmt(p[i]));
                    if let Some(e) = &e {
                        row.push(',');
                        row.push_str(&fmt(e[i]));
                    }
                    row
                }),
            )
        }
        Command::Error {
            ckpt,
            x0,
            t_list,
            grid,
            exact_self_test,
            out,
        } => {
            let s = surrogate_for(&ckpt, &x0)?;
            planar(&s)?;
            let g = grid.spec()?;
            let pts: Vec<Vec<f64>> = g.points().iter().map(|p| p.to_vec()).collect();
            let mut rows = Vec::with_capacity(t_list.len());
            for &t in t_list.iter() {
                let err = if exact_self_test {
                    s.theta_at(t)?;
                    let e = pts.iter().map(|x| s.exact(x, t, &x0)).collect::<Result<Vec<_>>>()?;
                    relative_l2(&g, &e, &e)
                } else {
                    s.relative_l2_error(t, &x0, &g)?
                };
                rows.push(format!("{},{}", fmt(t), fmt(err)));
            }
            emit(out.as_deref(), "t,rel_l2", rows.into_iter())
        }
        Command::Sample { query, n, seed } => {
            let s = surrogate_for(&query.ckpt, &query.x0)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs = s.sample(query.t, &query.x0, n, &mut rng)?;
            let header = (1..=s.dim()).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
            emit(
                query.out.as_deref(),
                &header,
                xs.iter().map(|x| x.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(",")),
            )
        }
        Command::Convolve {
            ckpt,
            mixture,
            t,
            grid,
            n_mc,
            seed,
            exact,
            out,
        } => {
            let s = Surrogate::load(&ckpt)?;
            planar(&s)?;
            let p0 = match mixture {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    MixtureInit::from_doc(&KvDoc::parse(&text)?)?
                }
                None => MixtureInit::standard(),
            };
            if n_mc == 0 {
                return Err(Error::Config("--n-mc must be positive".into()));
            }
            let g = grid.spec()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init: Vec<Vec<f64>> = (0..n_mc).map(|_| p0.sample(&mut rng).to_vec()).collect();
            let pts: Vec<Vec<f64>> = g.points().iter().map(|p| p.to_vec()).collect();
            let flow = s.green_convolve(&pts, t, &init)?;
            let reference = if exact { Some(s.exact_convolve(&pts, t, &init)?) } else { None };
            let header = if exact { "x1,x2,flow,exact" } else { "x1,x2,flow" };
            emit(
                out.as_deref(),
                header,
                pts.iter().enumerate().map(|(i, x)| {
                    let mut row = format!("{},{},{}", fmt(x[0]), fmt(x[1]), fmt(flow[i]));
                    if let Some(r) = &reference {
                        row.push(',');
                        row.push_str(&fmt(r[i]));
                    }
                    row
                }),
            )
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Error::Domain(format!("{failed} self-test check(s) failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

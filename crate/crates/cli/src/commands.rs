use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use matchtu::equilibrium::{solve_equilibrium_gradient, solve_ipfp, SolverOptions, StepSize};
use matchtu::estimation::{asymptotic_covariance, fit, gradient_f, Algorithm, FitOptions};
use matchtu::identification::{choo_siow, split_utilities_logit};
use matchtu::io;
use matchtu::model::surplus_from_basis;
use matchtu::simulation::{sample_from_patterns, simulate_micro_market, SimConfig};
use matchtu::{BasisSystem, Margins, SampleCounts, SurplusMatrix, TypeSpace};

use crate::config::{Paths, RunConfig, SimMode};
use crate::error::{CliError, Result};

pub struct Context {
    pub config: RunConfig,
    pub paths: Paths,
    pub started: Instant,
}

impl Context {
    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.paths.resolve(self.config.output_dir.as_deref().unwrap_or(Path::new(".")));
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        Ok(dir)
    }

    fn solver_options(&self) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions {
            tol: self.config.tol.unwrap_or(d.tol),
            max_iter: self.config.max_iter.unwrap_or(d.max_iter),
            step_size: self.config.step_size.map_or(StepSize::Auto, StepSize::Fixed),
            seed: self.config.seed.unwrap_or(0),
        }
    }

    fn sample(&self, types: Option<&TypeSpace>) -> Result<(TypeSpace, SampleCounts)> {
        let path = self.paths.required(&self.config.counts, "counts")?;
        let (types, sample) = io::read_counts(&path, types)?;
        let sample = match self.config.pseudo_count {
            Some(c) if c > 0.0 => sample.with_pseudo_count(c)?,
            _ => sample,
        };
        Ok((types, sample))
    }

    /// Surplus from a matrix file, or from basis and coefficients.
    fn surplus(&self) -> Result<(TypeSpace, SurplusMatrix)> {
        if let Some(p) = &self.config.surplus {
            let (types, m) = io::read_matrix(&self.paths.resolve(p))?;
            return Ok((types, SurplusMatrix::new(m)?));
        }
        let (types, basis) = self.basis(None)?;
        let lambda = self.lambda(&basis)?;
        Ok((types, surplus_from_basis(&lambda, &basis)?))
    }

    fn basis(&self, types: Option<&TypeSpace>) -> Result<(TypeSpace, BasisSystem)> {
        let path = self.paths.required(&self.config.basis, "basis")?;
        Ok(io::read_basis(&path, types)?)
    }

    fn lambda(&self, basis: &BasisSystem) -> Result<DVector<f64>> {
        let path = self.paths.required(&self.config.lambda, "lambda")?;
        Ok(io::read_lambda(&path, Some(basis.names()))?.1)
    }

    fn margins(&self, types: &TypeSpace) -> Result<Margins> {
        let path = self.paths.required(&self.config.margins, "margins")?;
        Ok(io::read_margins(&path, Some(types))?.1)
    }

    fn summary(&self, command: &str, dir: &Path, outputs: &[&str], extra: Value) -> Result<()> {
        let mut body = json!({
            "command": command,
            "schema_version": crate::config::SCHEMA_VERSION,
            "config_hash": self.config.hash(),
            "config": self.config,
            "outputs": outputs,
            "wall_time_seconds": self.started.elapsed().as_secs_f64(),
        });
        if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
            b.extend(e);
        }
        let path = dir.join(format!("summary_{command}.json"));
        let text = serde_json::to_string_pretty(&body).expect("summary serializes");
        std::fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })
    }
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn run_solve(ctx: &Context) -> Result<()> {
    let (types, phi) = ctx.surplus()?;
    let margins = ctx.margins(&types)?;
    let opts = ctx.solver_options();
    let algorithm = ctx.config.algorithm.as_deref().unwrap_or("ipfp");
    let sol = match algorithm {
        "ipfp" => solve_ipfp(&phi, &margins, &opts)?,
        "gradient" => solve_equilibrium_gradient(&phi, &margins, &opts)?,
        other => return Err(CliError::Config(format!("unknown algorithm `{other}` (ipfp or gradient)"))),
    };
    let dir = ctx.out_dir()?;
    io::write_patterns(&dir.join("equilibrium.csv"), &types, &sol.mu, "mass")?;
    io::write_utilities(&dir.join("utilities.csv"), &types, &sol.u, &sol.v)?;
    io::write_matrix(&dir.join("surplus.csv"), &types, phi.matrix())?;
    ctx.summary(
        "solve",
        &dir,
        &["equilibrium.csv", "utilities.csv", "surplus.csv"],
        json!({
            "algorithm": algorithm,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "total_surplus": sol.total_surplus,
        }),
    )
}

pub fn run_identify(ctx: &Context) -> Result<()> {
    let (types, sample) = ctx.sample(None)?;
    let phi = choo_siow(sample.counts())?;
    let split = split_utilities_logit(sample.counts())?;
    let dir = ctx.out_dir()?;
    io::write_matrix(&dir.join("surplus.csv"), &types, phi.matrix())?;
    io::write_matrix(&dir.join("surplus_men.csv"), &types, &split.u)?;
    io::write_matrix(&dir.join("surplus_women.csv"), &types, &split.v)?;
    ctx.summary(
        "identify",
        &dir,
        &["surplus.csv", "surplus_men.csv", "surplus_women.csv"],
        json!({ "n_households": sample.n_households(), "pseudo_count": sample.pseudo_count() }),
    )
}

fn fit_options(ctx: &Context) -> Result<FitOptions> {
    let algorithm: Algorithm = ctx
        .config
        .estimator
        .as_deref()
        .unwrap_or("gradient")
        .parse()
        .map_err(|e: matchtu::Error| CliError::Config(e.to_string()))?;
    let d = FitOptions::new(algorithm);
    Ok(FitOptions {
        algorithm,
        tol: ctx.config.tol.unwrap_or(d.tol),
        max_iter: ctx.config.max_iter.unwrap_or(d.max_iter),
        step_size: ctx.config.step_size.map_or(StepSize::Auto, StepSize::Fixed),
        seed: ctx.config.seed.unwrap_or(0),
    })
}

pub fn run_fit(ctx: &Context) -> Result<()> {
    let (types, sample) = ctx.sample(None)?;
    let (_, basis) = ctx.basis(Some(&types))?;
    let opts = fit_options(ctx)?;
    let rep = fit(&sample, &basis, &opts)?;
    let dir = ctx.out_dir()?;
    let mut outputs = vec!["lambda.csv"];
    io::write_lambda(&dir.join("lambda.csv"), basis.names(), &rep.alpha_hat.lambda)?;
    if opts.algorithm != Algorithm::MaxScore {
        io::write_estimates(&dir.join("estimates.csv"), &types, basis.names(), &rep.alpha_hat, rep.std_errors.as_ref())?;
        outputs.push("estimates.csv");
    }
    if let Some(mu) = &rep.mu_fit {
        io::write_patterns(&dir.join("fitted.csv"), &types, mu, "mass")?;
        outputs.push("fitted.csv");
    }
    if !rep.trace.is_empty() {
        let mut body = String::from("step,objective\n");
        for (i, v) in rep.trace.iter().enumerate() {
            body.push_str(&format!("{i},{v}\n"));
        }
        let path = dir.join("trace.csv");
        std::fs::write(&path, body).map_err(|source| CliError::Io { path, source })?;
        outputs.push("trace.csv");
    }
    let mut extra = json!({
        "estimator": opts.algorithm.to_string(),
        "iterations": rep.iterations,
        "residual": rep.gradient_norm,
        "objective_value": finite_or_null(rep.objective_value),
        "negative_utilities": rep.negative_utilities,
        "n_households": rep.n_households,
        "pseudo_count": rep.pseudo_count,
    });
    if let Some(m) = &rep.mle {
        extra["mle"] = json!({
            "log_likelihood": m.log_likelihood,
            "starts": m.starts,
            "converged_starts": m.converged_starts,
            "distinct_optima": m.distinct_optima,
        });
    }
    if let Some(s) = &rep.max_score {
        extra["max_score"] = json!({
            "score": s.score,
            "max_possible": s.max_possible,
            "quadruples": s.quadruples,
            "directions_searched": s.directions_searched,
            "tie_count": s.tie_count,
        });
    }
    ctx.summary("fit", &dir, &outputs, extra)
}

pub fn run_se(ctx: &Context) -> Result<()> {
    let (types, sample) = ctx.sample(None)?;
    let (_, basis) = ctx.basis(Some(&types))?;
    let est_path = ctx.paths.required(&ctx.config.estimates, "estimates")?;
    let (alpha, _) = io::read_estimates(&est_path, &types, basis.names())?;
    let cov = asymptotic_covariance(&alpha, &sample, &basis)?;
    let grad = gradient_f(&alpha, &sample.frequencies(), &basis)?;
    let dir = ctx.out_dir()?;
    io::write_estimates(&dir.join("standard_errors.csv"), &types, basis.names(), &alpha, Some(&cov.std_errors))?;
    write_covariance(&dir.join("covariance.csv"), &types, basis.names(), &cov.covariance)?;
    ctx.summary(
        "se",
        &dir,
        &["standard_errors.csv", "covariance.csv"],
        json!({
            "parameters": alpha.len(),
            "n_households": sample.n_households(),
            "residual": grad.amax(),
        }),
    )
}

fn write_covariance(path: &Path, types: &TypeSpace, names: &[String], cov: &DMatrix<f64>) -> Result<()> {
    let labels: Vec<String> = names
        .iter()
        .map(|n| format!("lambda:{n}"))
        .chain(types.x_labels().iter().map(|l| format!("u:{l}")))
        .chain(types.y_labels().iter().map(|l| format!("v:{l}")))
        .collect();
    let mut body = format!("parameter,{}\n", labels.join(","));
    for (i, l) in labels.iter().enumerate() {
        body.push_str(l);
        for j in 0..cov.ncols() {
            body.push_str(&format!(",{}", cov[(i, j)]));
        }
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn head_counts(v: &DVector<f64>, side: &str) -> Result<Vec<usize>> {
    v.iter()
        .map(|&c| {
            if c.fract() == 0.0 && c >= 0.0 {
                Ok(c as usize)
            } else {
                Err(CliError::Config(format!("micro mode needs integer {side} margins, found {c}")))
            }
        })
        .collect()
}

pub fn run_simulate(ctx: &Context) -> Result<()> {
    let (types, phi) = ctx.surplus()?;
    let margins = ctx.margins(&types)?;
    let mode = ctx.config.mode.unwrap_or_default();
    let seed = ctx.config.seed.unwrap_or(0);
    let dir = ctx.out_dir()?;
    let counts_path = dir.join("counts.csv");
    let extra = match mode {
        SimMode::Aggregate | SimMode::Exact => {
            let n_h = ctx
                .config
                .n_households
                .ok_or_else(|| CliError::Config("`n_households` is required for this mode".into()))?;
            let tol = 1e-14 * margins.total().max(1.0);
            let eq = solve_ipfp(&phi, &margins, &SolverOptions { tol, max_iter: 1_000_000, ..Default::default() })?;
            let sample = if mode == SimMode::Exact {
                SampleCounts::from_frequencies(&eq.mu, n_h as f64)?
            } else if n_h == 0 {
                SampleCounts::from_counts(matchtu::MatchingPatterns::zeros(types.nx(), types.ny()))?
            } else {
                sample_from_patterns(&eq.mu, n_h, seed)?
            };
            io::write_counts(&counts_path, &types, &sample)?;
            json!({ "mode": mode, "n_households": n_h, "seed": seed, "iterations": eq.iterations, "residual": eq.residual })
        }
        SimMode::Micro => {
            let men = head_counts(&margins.n, "x")?;
            let women = head_counts(&margins.m, "y")?;
            let sim = simulate_micro_market(&phi, &men, &women, &SimConfig::new(0, seed))?;
            io::write_counts(&counts_path, &types, &sim.sample)?;
            json!({
                "mode": mode,
                "seed": seed,
                "primal_value": sim.solution.primal_value,
                "dual_value": sim.solution.dual_value(),
                "stability_violation": sim.stability_violation(&phi),
            })
        }
    };
    ctx.summary("simulate", &dir, &["counts.csv"], extra)
}

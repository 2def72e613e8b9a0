use std::fs::File;
use std::io::BufReader;

use roughrand::brownian::BrownianDraw;
use roughrand::filtering::{compare_with_kalman, unit_mass_check};
use roughrand::meanfield::conditional_mkv_check;
use roughrand::presets;
use roughrand::randomise::{conditional_law_report, pathwise_coupling_report, DriverSpec, RandomisationExperiment, TestFn};
use roughrand::rng::{derive_seed, stream};
use roughrand::rough_integral::{estimate_fatnorm, increment_moment_check, integral_path, ControlledEnsemble, ControlledPath};
use roughrand::rough_path::{lift_moment_check, read_rough_path, sample_bm_lift, sample_bm_lift_with_draw, write_rough_path};
use roughrand::rsde::{geometric_closed_form_table, solve_rsde};
use roughrand::volpricing::{conditional_price_rough, Payoff};
use roughrand::{Result, RoughPath, TimeGrid};

use crate::config::{Experiment, Plan};

/// Files to write, a human-readable summary and the verdict against the
/// experiment's built-in threshold.
pub struct Report {
    pub files: Vec<(String, String)>,
    pub summary: String,
    pub pass: bool,
}

impl Report {
    fn new(pass: bool, summary: String) -> Self {
        Report {
            files: Vec::new(),
            summary,
            pass,
        }
    }

    fn file(mut self, name: &str, body: String) -> Self {
        self.files.push((name.to_string(), body));
        self
    }
}

pub fn run(plan: &Plan) -> Result<Report> {
    match plan.experiment {
        Experiment::LiftStats => lift_stats(plan),
        Experiment::Integrate => integrate(plan),
        Experiment::SolveRsde => solve(plan),
        Experiment::RandomisePathwise => randomise_pathwise(plan),
        Experiment::RandomiseLaw => randomise_law(plan),
        Experiment::Filter => filter(plan),
        Experiment::Price => price(plan),
        Experiment::Meanfield => meanfield(plan),
    }
}

fn rough_path_csv(rp: &RoughPath) -> Result<String> {
    let mut buf = Vec::new();
    write_rough_path(rp, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

fn path_csv(grid: &TimeGrid, dim: usize, values: &[f64], prefix: &str) -> String {
    let mut s = String::from("time");
    for c in 0..dim {
        s.push_str(&format!(",{prefix}{}", c + 1));
    }
    s.push('\n');
    for i in 0..=grid.steps() {
        s.push_str(&format!("{:e}", grid.time(i)));
        for v in &values[i * dim..(i + 1) * dim] {
            s.push_str(&format!(",{v:e}"));
        }
        s.push('\n');
    }
    s
}

fn lift_stats(plan: &Plan) -> Result<Report> {
    let c = &plan.config;
    let rep = lift_moment_check(c.lift.dim, &plan.grid, c.grid.fine_factor, c.monte_carlo.samples, plan.seed)?;
    let z = rep.max_abs_z();
    let first = sample_bm_lift(c.lift.dim, &plan.grid, c.grid.fine_factor, derive_seed(plan.seed, stream::DRIVER, 0), plan.convention)?;
    let summary = format!("{} moment checks, max |z| = {z:.4} (threshold 3)\n", rep.rows.len());
    Ok(Report::new(z <= 3.0, summary)
        .file("lift_moments.csv", rep.to_csv())
        .file("sample_lift.csv", rough_path_csv(&first)?))
}

fn integrate(plan: &Plan) -> Result<Report> {
    let c = &plan.config;
    let d = c.lift.dim;
    let mut samples = Vec::with_capacity(c.monte_carlo.samples);
    let mut drivers = Vec::with_capacity(c.monte_carlo.samples);
    for k in 0..c.monte_carlo.samples {
        let rp = sample_bm_lift(d, &plan.grid, c.grid.fine_factor, derive_seed(plan.seed, stream::DRIVER, k as u64), plan.convention)?;
        samples.push(ControlledPath::identity_of(&rp));
        drivers.push(rp);
    }
    let first = integral_path(&samples[0], &drivers[0])?;
    let ens = ControlledEnsemble::new(samples, drivers)?;
    let (alpha, p) = (c.monte_carlo.alpha, c.monte_carlo.p);
    let norms = estimate_fatnorm(&ens, alpha, p)?;
    let moments = increment_moment_check(&ens, p, alpha)?;
    let summary = format!(
        "integrand Y against its own lift, d = {d}\nfat norm {:e} (remainder se {:e})\nincrement moment ratios within a factor 2 of their median {:e}: {}\n",
        norms.fatnorm_total, norms.remainder_stderr, moments.median, moments.bounded
    );
    Ok(Report::new(moments.bounded, summary)
        .file("integral.csv", path_csv(&plan.grid, d * d, &first, "I"))
        .file("moments.csv", moments.table.to_csv("span", false))
        .file("seminorms.txt", norms.to_text()))
}

fn solve(plan: &Plan) -> Result<Report> {
    let c = &plan.config;
    if let Some(levels) = &c.ladder.levels {
        let finest = 1usize << levels.iter().max().expect("validated");
        let table = geometric_closed_form_table(plan.convention, levels, finest * c.grid.fine_factor, c.monte_carlo.samples, plan.seed)?;
        let rate = table.fit("terminal_rms").map(|f| f.rate).unwrap_or(f64::NAN);
        let summary = format!("terminal RMS error against the closed form: fitted rate {rate:.4} (threshold 0.9)\n");
        return Ok(Report::new(rate >= 0.9, summary).file("closed_form.csv", table.to_csv("mesh", true)));
    }
    let (name, params) = plan.preset();
    let model = presets::rsde(name, params)?;
    let spec = &model.spec;
    let rp = match &c.lift.input {
        Some(path) => read_rough_path(BufReader::new(File::open(path)?))?,
        None => sample_bm_lift_with_draw(spec.dim_y, &plan.grid, c.grid.fine_factor, derive_seed(plan.seed, stream::DRIVER, 0), plan.convention)?.lift,
    };
    let fine = rp.grid().refine(c.grid.fine_factor)?;
    let bm = BrownianDraw::sample(spec.dim_b, &fine, derive_seed(plan.seed, stream::BROWNIAN, 0));
    let sol = solve_rsde(spec, &rp, &bm, &model.x0)?;
    let summary = format!("solved on {} coarse steps, terminal state {:?}\n", rp.steps(), sol.terminal());
    Ok(Report::new(true, summary)
        .file("solution.csv", sol.to_csv())
        .file("rough_path.csv", rough_path_csv(&rp)?))
}

fn experiment(plan: &Plan, grid: TimeGrid) -> Result<RandomisationExperiment> {
    let (name, params) = plan.preset();
    let model = presets::rsde(name, params)?;
    let dim = model.spec.dim_y;
    Ok(RandomisationExperiment {
        rsde: model.spec,
        driver: DriverSpec::Brownian { dim },
        x0: model.x0,
        grid,
        fine_factor: plan.config.grid.fine_factor,
        seed: plan.seed,
    })
}

fn randomise_pathwise(plan: &Plan) -> Result<Report> {
    let c = &plan.config;
    let ladder = c.ladder.steps.as_deref().expect("validated");
    let finest = *ladder.iter().max().expect("validated");
    let exp = experiment(plan, TimeGrid::uniform(c.grid.horizon, finest)?)?;
    let rep = pathwise_coupling_report(&exp, ladder, c.monte_carlo.samples)?;
    let rate = rep.fit.as_ref().map(|f| f.rate).unwrap_or(f64::NAN);
    let pass = rep.strictly_decreasing && rate >= 0.4;
    Ok(Report::new(pass, rep.summary() + "threshold: strictly decreasing with rate >= 0.4\n").file("pathwise.csv", rep.to_csv()))
}

fn randomise_law(plan: &Plan) -> Result<Report> {
    let c = &plan.config;
    let exp = experiment(plan, plan.grid.clone())?;
    let phis = [TestFn::component(0), TestFn::component_squared(0)];
    let rep = conditional_law_report(&exp, &phis, c.monte_carlo.outer, c.monte_carlo.samples)?;
    let pass = rep.pass_fraction.iter().all(|(_, f)| *f >= 0.95) && rep.tower.iter().all(|t| t.z.abs() <= 3.0);
    let summary = rep.summary() + "threshold: |z| <= 3 for at least 95% of draws, tower |z| <= 3\n";
    Ok(Report::new(pass, summary)
        .file("conditional_law.csv", rep.to_csv())
        .file("tower.csv", rep.tower_csv()))
}

fn filter(plan: &Plan) -> Result<Report> {
    let c = &plan.config;
    let (name, params) = plan.preset();
    let lp = presets::filter(name, params)?;
    let (ff, m) = (c.grid.fine_factor, c.monte_carlo.samples);
    let cmp = compare_with_kalman(&lp, &plan.grid, ff, m, plan.seed)?;
    let mass = unit_mass_check(&lp.model()?, &plan.grid, ff, m, derive_seed(plan.seed, stream::TOWER, 0))?;
    let z = mass.max_abs_z();
    let pass = cmp.passed() && z <= 3.0;
    let summary = format!(
        "sup gap to the Kalman-Bucy mean {:e}, threshold {:e}\nunit mass max |z| {z:.4} (threshold 3)\n",
        cmp.sup_gap(),
        cmp.threshold()
    );
    Ok(Report::new(pass, summary)
        .file("kalman.csv", cmp.to_csv())
        .file("unit_mass.csv", mass.to_csv()))
}

fn price(plan: &Plan) -> Result<Report> {
    let c = &plan.config;
    let (name, params) = plan.preset();
    let model = presets::lsv(name, params)?;
    let strikes = &c.price.as_ref().expect("validated").strikes;
    let rep = conditional_price_rough(
        &model,
        &Payoff::calls(strikes),
        c.monte_carlo.outer,
        c.monte_carlo.samples,
        &plan.grid,
        c.grid.fine_factor,
        plan.seed,
    )?;
    let frac = rep.draw_pass_fraction().unwrap_or(0.0);
    let tower = rep.tower_z().iter().map(|z| z.abs()).fold(0.0, f64::max);
    let mono = rep.oracle_monotone();
    let summary = format!(
        "outer draws within 3 (se + scheme bound) of the oracle: {:.1}% (threshold 95%)\nmax tower |z| {tower:.4} (threshold 3)\noracle monotone in strike: {mono}\nnegative bracket derivatives floored: {}\n",
        100.0 * frac,
        rep.floored
    );
    Ok(Report::new(frac >= 0.95 && tower <= 3.0 && mono, summary)
        .file("prices.csv", rep.to_csv())
        .file("draws.csv", rep.draws_csv()))
}

fn meanfield(plan: &Plan) -> Result<Report> {
    let c = &plan.config;
    let (name, params) = plan.preset();
    let spec = presets::mkv(name, params)?;
    let steps = c.ladder.steps.as_deref().expect("validated");
    let particles = c.ladder.particles.as_deref().expect("validated");
    let rep = conditional_mkv_check(&spec, particles, c.monte_carlo.outer, steps, c.grid.horizon, c.grid.fine_factor, plan.seed)?;
    let finest = *steps.iter().max().expect("validated");
    let (lo, hi) = (*particles.iter().min().expect("validated"), *particles.iter().max().expect("validated"));
    let (small, large) = (rep.median_w1(lo, finest), rep.median_w1(hi, finest));
    let summary = format!(
        "median W1 between the routes at {finest} steps: {small:e} with {lo} particles, {large:e} with {hi} particles\nthreshold: the larger ensemble at most half the smaller\n"
    );
    Ok(Report::new(large <= 0.5 * small, summary)
        .file("mckean.csv", rep.rows_csv())
        .file("mckean_table.csv", rep.table.to_csv("scale", false)))
}

use passlab_core::analysis::{
    conventional_outage, outage_full_regime, outage_monte_carlo, policy_closed_form, AntennaPolicy, LinkBudget, OutageSpec,
};
use passlab_core::beamforming::dbm_to_watts;
use passlab_core::rng::substream_seed;

use super::Run;
use crate::config::OutagePolicy;
use crate::error::CliError;
use crate::output::num;

/// Closed forms closer than this are reported as equal.
const EQUAL_TOL: f64 = 1e-7;

pub fn run(run: &mut Run) -> Result<(), CliError> {
    let o = &run.cfg.outage;
    let sc = run.scenario();
    let g = &sc.geometry;
    let site = o.conventional_site.unwrap_or_else(|| g.region_center());
    let policy = match o.policy {
        OutagePolicy::Movable => AntennaPolicy::Movable,
        OutagePolicy::Degenerate => AntennaPolicy::Fixed(vec![site]),
    };
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for &density in &o.densities {
        for &p_dbm in &o.p_max_dbm {
            let spec = OutageSpec {
                rate_threshold: o.rate_threshold,
                density,
                user_x: o.user_x,
                trials: o.trials,
                conventional_site: site,
            };
            let link = LinkBudget {
                p_max: dbm_to_watts(p_dbm),
                noise: sc.power.noise,
                gain: sc.radio.gain,
            };
            // Seeded by the row's own parameters so a row does not depend on the rest of the sweep.
            let row_seed = substream_seed(substream_seed(run.seed, "outage", density.to_bits()), "outage-power", p_dbm.to_bits());
            let mc = outage_monte_carlo(&spec, g, &policy, &link, row_seed).map_err(CliError::runtime)?;
            let closed = policy_closed_form(&spec, g, &policy).map_err(CliError::runtime)?;
            let full = outage_full_regime(&spec, g, &policy, &link).map_err(CliError::runtime)?;
            let conventional = conventional_outage(&spec, g).map_err(CliError::runtime)?;
            let gap = conventional - closed;
            let ordering = if gap > EQUAL_TOL {
                "less"
            } else if gap >= -EQUAL_TOL {
                "equal"
            } else {
                violations.push(format!("phi1={density} p_max_dbm={p_dbm}: {closed} > {conventional}"));
                "greater"
            };
            rows.push(vec![
                num(density),
                num(p_dbm),
                num(mc.estimate),
                num(mc.half_width),
                num(closed),
                num(full),
                num(conventional),
                num(gap),
                ordering.to_string(),
            ]);
        }
    }
    let verdict = if violations.is_empty() { "PASS" } else { "FAIL" };
    run.out.write_csv(
        "outage.csv",
        &[
            "phi1",
            "p_max_dbm",
            "mc_estimate",
            "ci_halfwidth",
            "closed_form",
            "full_regime",
            "conventional",
            "gap",
            "ordering",
        ],
        &rows,
        &[format!("ordering={verdict}")],
    )?;
    println!("outage ordering {verdict}");
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Property(violations.join("; ")))
    }
}

//! Event-driven simulation of the one-compartment model with first-order absorption.
//!
//! The state is the pair (depot amount, central amount) in mg. Between consecutive events,
//! and additionally at every midnight, parameters are frozen at the covariate record of the
//! segment's starting day and the state is advanced with the closed-form solution.

use serde::{Deserialize, Serialize};

use super::theta::{clearance_at, sigmoid_clearance, StructuralTheta};
use super::timeline::{CovariateState, Event, EventTimeline};
use crate::error::{Error, Result};

/// mg/L to ng/mL.
pub const MG_PER_L_TO_NG_PER_ML: f64 = 1000.0;

/// Relative closeness of ka and ke below which the coincident-rate formula is used.
const RATE_COINCIDENCE_TOL: f64 = 1e-9;

/// Structural parameter that carries a log-normal random effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaTarget {
    /// Apparent clearance (multiplies the covariate-adjusted sigmoid).
    Cl,
    /// Apparent volume.
    V,
    /// Day of half-maximal clearance.
    Tcl50,
}

impl EtaTarget {
    pub fn name(self) -> &'static str {
        match self {
            EtaTarget::Cl => "cl",
            EtaTarget::V => "v",
            EtaTarget::Tcl50 => "tcl50",
        }
    }
}

/// Individual parameters for one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndividualParams {
    pub cl: f64,
    pub v: f64,
    pub ka: f64,
}

fn eta_for(eta_map: &[EtaTarget], eta: &[f64], target: EtaTarget) -> f64 {
    eta_map.iter().position(|t| *t == target).map_or(0.0, |i| eta[i])
}

/// Individual parameters: `CL_i = CL(cov) * exp(eta_CL)`, `V_i = V/F * exp(eta_V)`, with an
/// optional `TCL50_i = TCL50 * exp(eta_TCL50)` inside the sigmoid. `ka` is shared.
pub fn individual_theta(
    theta: &StructuralTheta,
    eta_map: &[EtaTarget],
    eta: &[f64],
    cov: &CovariateState,
) -> Result<IndividualParams> {
    if eta_map.len() != eta.len() {
        return Err(Error::Config(format!(
            "eta has {} entries but the model declares {}",
            eta.len(),
            eta_map.len()
        )));
    }
    let eta_tcl50 = eta_for(eta_map, eta, EtaTarget::Tcl50);
    let cl_pop = if eta_tcl50 == 0.0 {
        clearance_at(theta, cov)?
    } else {
        if cov.pod < 1 {
            return Err(Error::Domain(format!("POD must be >= 1, got {}", cov.pod)));
        }
        let tcl50 = theta.tcl50 * eta_tcl50.exp();
        sigmoid_clearance(theta.cl_max, tcl50, theta.gamma, f64::from(cov.pod)) * theta.covariate_multiplier(cov)?
    };
    Ok(IndividualParams {
        cl: cl_pop * eta_for(eta_map, eta, EtaTarget::Cl).exp(),
        v: theta.v_f * eta_for(eta_map, eta, EtaTarget::V).exp(),
        ka: theta.ka,
    })
}

/// Closed-form advance of (depot, central) over `dt` hours.
#[inline]
pub fn advance(depot: f64, central: f64, ka: f64, ke: f64, dt: f64) -> (f64, f64) {
    let e_a = (-ka * dt).exp();
    let e_e = (-ke * dt).exp();
    let transfer = if (ka - ke).abs() <= RATE_COINCIDENCE_TOL * ka.max(ke) {
        // Limit of (e^{-ke t} - e^{-ka t}) / (ka - ke) as ka -> ke.
        dt * e_e
    } else {
        (e_e - e_a) / (ka - ke)
    };
    (depot * e_a, central * e_e + depot * ka * transfer)
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Advance { dt: f64, day: usize },
    Dose(f64),
    Observe,
}

/// A timeline compiled into a flat list of advance/dose/observe steps.
///
/// Compiling once and running many times is the fast path used by estimation.
#[derive(Debug, Clone)]
pub struct SimulationPlan {
    steps: Vec<Step>,
    days: Vec<CovariateState>,
    obs_times: Vec<(f64, u32)>,
}

impl SimulationPlan {
    pub fn new(timeline: &EventTimeline) -> Result<Self> {
        let mut steps = Vec::new();
        let mut obs_times = Vec::new();
        let Some((first_pod, last_pod)) = timeline.pod_span() else {
            return Ok(Self {
                steps,
                days: Vec::new(),
                obs_times,
            });
        };
        let days = (first_pod..=last_pod)
            .map(|pod| timeline.covariates_at(pod))
            .collect::<Result<Vec<_>>>()?;
        let day_index = |t: f64| (timeline.pod_at(t) - i64::from(first_pod)) as usize;

        let mut dosed = false;
        let mut t_cur = timeline.events()[0].time();
        for ev in timeline.events() {
            let te = ev.time();
            if te < t_cur {
                return Err(Error::data(&timeline.patient_id, "negative interval between events"));
            }
            if dosed {
                // Split at each midnight crossed.
                while t_cur < te {
                    let next_midnight = timeline.pod_start(timeline.pod_at(t_cur) + 1);
                    let seg_end = next_midnight.min(te);
                    steps.push(Step::Advance {
                        dt: seg_end - t_cur,
                        day: day_index(t_cur),
                    });
                    t_cur = seg_end;
                }
            }
            t_cur = te;
            match ev {
                Event::Dose { amount, .. } => {
                    dosed = true;
                    steps.push(Step::Dose(*amount));
                }
                Event::Observation { .. } => {
                    steps.push(Step::Observe);
                    obs_times.push((te, timeline.pod_at(te) as u32));
                }
            }
        }
        Ok(Self { steps, days, obs_times })
    }

    /// Number of observation events (any MDV).
    pub fn n_observations(&self) -> usize {
        self.obs_times.len()
    }

    /// Concentrations (ng/mL) at every observation event.
    pub fn run(&self, theta: &StructuralTheta, eta_map: &[EtaTarget], eta: &[f64]) -> Result<Vec<f64>> {
        let params = self
            .days
            .iter()
            .map(|cov| individual_theta(theta, eta_map, eta, cov))
            .collect::<Result<Vec<_>>>()?;
        self.run_with(&params)
    }

    /// Runs with explicit per-day individual parameters (one entry per covered day).
    pub fn run_with(&self, params: &[IndividualParams]) -> Result<Vec<f64>> {
        if params.len() != self.days.len() {
            return Err(Error::Config(format!(
                "expected {} daily parameter sets, got {}",
                self.days.len(),
                params.len()
            )));
        }
        let mut out = Vec::with_capacity(self.obs_times.len());
        let (mut depot, mut central) = (0.0, 0.0);
        let mut last_day = 0;
        for step in &self.steps {
            match *step {
                Step::Advance { dt, day } => {
                    let p = params[day];
                    (depot, central) = advance(depot, central, p.ka, p.cl / p.v, dt);
                    last_day = day;
                }
                Step::Dose(amount) => depot += amount,
                Step::Observe => {
                    let v = params.get(last_day).map_or(1.0, |p| p.v);
                    out.push((central / v * MG_PER_L_TO_NG_PER_ML).max(0.0));
                }
            }
        }
        Ok(out)
    }

    pub fn days(&self) -> &[CovariateState] {
        &self.days
    }

    pub fn observation_times(&self) -> &[(f64, u32)] {
        &self.obs_times
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    APriori,
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub time: f64,
    pub pod: u32,
    /// ng/mL
    pub concentration: f64,
}

/// Predicted concentrations at every observation event of a timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationProfile {
    pub points: Vec<ProfilePoint>,
    pub kind: ProfileKind,
}

impl ConcentrationProfile {
    pub fn concentrations(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.concentration).collect()
    }
}

/// Simulates the timeline under `theta` and `eta`, reporting a point at every observation.
pub fn simulate(
    timeline: &EventTimeline,
    theta: &StructuralTheta,
    eta_map: &[EtaTarget],
    eta: &[f64],
) -> Result<ConcentrationProfile> {
    let plan = SimulationPlan::new(timeline)?;
    let conc = plan.run(theta, eta_map, eta)?;
    let points = plan
        .obs_times
        .iter()
        .zip(conc)
        .map(|(&(time, pod), concentration)| ProfilePoint {
            time,
            pod,
            concentration,
        })
        .collect();
    let kind = if eta.iter().all(|e| *e == 0.0) {
        ProfileKind::APriori
    } else {
        ProfileKind::Individual
    };
    Ok(ConcentrationProfile { points, kind })
}

/// Scales every concentration by `factor`; by linearity this equals re-simulating with all
/// doses multiplied by `factor`.
pub fn dose_linearity_scale(profile: &ConcentrationProfile, factor: f64) -> Result<ConcentrationProfile> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Domain(format!("dose scaling factor must be > 0, got {factor}")));
    }
    let mut out = profile.clone();
    for p in &mut out.points {
        p.concentration *= factor;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::pk::timeline::CovariateRecord;

    fn flat_covariates(days: std::ops::RangeInclusive<u32>) -> BTreeMap<u32, CovariateRecord> {
        days.map(|d| {
            (
                d,
                CovariateRecord {
                    alb: Some(32.0),
                    asat: Some(40.0),
                    weight: Some(70.0),
                },
            )
        })
        .collect()
    }

    fn obs(t: f64) -> Event {
        Event::Observation {
            time: t,
            value: None,
            mdv: true,
        }
    }

    #[test]
    fn no_doses_gives_zero() {
        let tl = EventTimeline::new("p", vec![obs(5.0), obs(30.0)], flat_covariates(1..=2), 1).unwrap();
        let theta = StructuralTheta::new(20.0, 5.0, 2.0, 100.0, 4.0);
        let prof = simulate(&tl, &theta, &[], &[]).unwrap();
        assert_eq!(prof.concentrations(), vec![0.0, 0.0]);
        assert_eq!(prof.kind, ProfileKind::APriori);
    }

    #[test]
    fn single_dose_closed_form() {
        // Huge POD and tcl50 tiny: clearance is effectively cl_max = 10.
        let theta = StructuralTheta::new(10.0, 1e-9, 1.0, 100.0, 4.0);
        let tl = EventTimeline::new(
            "p",
            vec![Event::Dose { time: 0.0, amount: 5.0 }, obs(12.0)],
            flat_covariates(1..=1),
            1,
        )
        .unwrap();
        let c = simulate(&tl, &theta, &[], &[]).unwrap().concentrations()[0];
        let (ka, ke, t) = (4.0f64, 0.1f64, 12.0f64);
        let expected = 5.0 / 100.0 * ka / (ka - ke) * ((-ke * t).exp() - (-ka * t).exp()) * 1000.0;
        assert!((c - expected).abs() / expected < 1e-8);
    }

    #[test]
    fn coincident_rates_use_limit() {
        let (d, c) = advance(1.0, 0.0, 0.5, 0.5, 2.0);
        assert!((d - (-1.0f64).exp()).abs() < 1e-15);
        assert!((c - 0.5 * 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        // Continuity across the switch.
        let (_, c2) = advance(1.0, 0.0, 0.5 * (1.0 + 1e-7), 0.5, 2.0);
        assert!((c - c2).abs() < 1e-7);
    }

    #[test]
    fn eta_scaling() {
        let theta = StructuralTheta::new(10.0, 1e-12, 1.0, 100.0, 4.0);
        let cov = CovariateState {
            pod: 5,
            alb: 32.0,
            asat: 40.0,
            weight: 70.0,
        };
        let map = [EtaTarget::Cl, EtaTarget::V];
        let pop = individual_theta(&theta, &map, &[0.0, 0.0], &cov).unwrap();
        assert!((pop.cl - 10.0).abs() < 1e-9);
        assert_eq!(pop.v, 100.0);
        let ind = individual_theta(&theta, &map, &[2f64.ln(), 0.0], &cov).unwrap();
        assert!((ind.cl - 20.0).abs() < 1e-9);
        let theta2 = StructuralTheta::new(26.5, 1.5, 1.0, 100.0, 4.0);
        let cov3 = CovariateState { pod: 3, ..cov };
        let ind = individual_theta(&theta2, &map, &[0.3, 0.0], &cov3).unwrap();
        assert!((ind.cl - 17.666_666_666_666_668 * 0.3f64.exp()).abs() < 1e-12);
        assert!((ind.cl - 23.848).abs() < 1e-3);
        assert!(matches!(
            individual_theta(&theta, &map, &[0.0], &cov),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn linearity_scale() {
        let theta = StructuralTheta::new(20.0, 5.0, 2.0, 200.0, 4.0);
        let mut events = Vec::new();
        for k in 0..10 {
            events.push(Event::Dose {
                time: 7.25 + 24.0 * k as f64,
                amount: 3.0,
            });
            events.push(obs(6.0 + 24.0 * (k + 1) as f64));
        }
        let tl = EventTimeline::new("p", events, flat_covariates(1..=11), 1).unwrap();
        let base = simulate(&tl, &theta, &[], &[]).unwrap();
        assert_eq!(dose_linearity_scale(&base, 1.0).unwrap(), base);
        let doubled = dose_linearity_scale(&base, 2.0).unwrap();
        let resim = simulate(&tl.scale_doses(2.0), &theta, &[], &[]).unwrap();
        for (a, b) in doubled.concentrations().iter().zip(resim.concentrations()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        assert!(dose_linearity_scale(&base, 0.0).is_err());
    }
}

#[cfg(test)]
mod props {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::pk::timeline::CovariateRecord;

    fn timeline(doses: &[(f64, f64)], obs: &[f64]) -> EventTimeline {
        let mut events: Vec<Event> = doses
            .iter()
            .map(|&(time, amount)| Event::Dose { time, amount })
            .collect();
        events.extend(obs.iter().map(|&time| Event::Observation {
            time,
            value: None,
            mdv: true,
        }));
        let covs: BTreeMap<u32, CovariateRecord> = (1..=6)
            .map(|d| {
                (
                    d,
                    CovariateRecord {
                        alb: Some(30.0),
                        asat: Some(90.0),
                        weight: Some(70.0),
                    },
                )
            })
            .collect();
        EventTimeline::new("p", events, covs, 1).unwrap()
    }

    fn obs_times() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::btree_set(0u32..14_000, 1..12)
            .prop_map(|s| s.into_iter().map(|k| f64::from(k) / 100.0 + 0.005).collect())
    }

    proptest! {
        #[test]
        fn superposition(
            d1 in (0.0..60.0f64, 0.5..10.0f64),
            d2 in (0.0..60.0f64, 0.5..10.0f64),
            obs in obs_times(),
            p in (2.0..40.0f64, 100.0..900.0f64, 0.3..6.0f64),
        ) {
            let params = IndividualParams { cl: p.0, v: p.1, ka: p.2 };
            let run = |tl: &EventTimeline| {
                let plan = SimulationPlan::new(tl).unwrap();
                plan.run_with(&vec![params; plan.days().len()]).unwrap()
            };
            let both = run(&timeline(&[d1, d2], &obs));
            let a = run(&timeline(&[d1], &obs));
            let b = run(&timeline(&[d2], &obs));
            for i in 0..obs.len() {
                let sum = a[i] + b[i];
                prop_assert!((both[i] - sum).abs() <= 1e-10 * sum.max(1e-12), "{} vs {}", both[i], sum);
            }
        }

        #[test]
        fn non_negative(
            doses in prop::collection::vec((0.0..140.0f64, 0.5..10.0f64), 0..8),
            obs in obs_times(),
            theta in (1.0..60.0f64, 0.5..20.0f64, 0.3..6.0f64, 50.0..900.0f64, 0.2..8.0f64),
            eta in prop::collection::vec(-2.0..2.0f64, 3),
        ) {
            let tl = timeline(&doses, &obs);
            let th = StructuralTheta::new(theta.0, theta.1, theta.2, theta.3, theta.4);
            let c = SimulationPlan::new(&tl)
                .unwrap()
                .run(&th, &[EtaTarget::Cl, EtaTarget::V, EtaTarget::Tcl50], &eta)
                .unwrap();
            prop_assert!(c.iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }
}

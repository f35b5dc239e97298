//! Seeded synthetic cohorts: twice-daily dosing at 07:15 and 18:30, 06:00 troughs, slowly
//! recovering liver labs, trough-guided dose adjustment.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{locf_fill, locf_fill_timeline, write_dataset, Cohort, Provenance};
use crate::error::Result;
use crate::estimator::{Omega, PopulationModel, ResidualError};
use crate::forecast::{round_dose, TargetRange};
use crate::pk::{
    Covariate, CovariateEffect, CovariateRecord, EffectForm, EtaTarget, Event, EventTimeline, SimulationPlan,
    StructuralTheta,
};

pub const MORNING_DOSE_H: f64 = 7.25;
pub const EVENING_DOSE_H: f64 = 18.5;
pub const TROUGH_H: f64 = 6.0;

/// Reference model used for synthetic data and examples.
pub fn reference_theta() -> StructuralTheta {
    StructuralTheta::new(22.0, 4.0, 2.5, 450.0, 4.5)
        .with_effect(CovariateEffect::new(
            "alb_on_cl",
            Covariate::Alb,
            EffectForm::Power,
            0.8,
            30.0,
        ))
        .with_effect(CovariateEffect::new(
            "asat_on_cl",
            Covariate::Asat,
            EffectForm::Power,
            -0.3,
            100.0,
        ))
}

pub fn reference_model() -> PopulationModel {
    let omega = Omega::diagonal(vec![EtaTarget::Cl, EtaTarget::V, EtaTarget::Tcl50], &[0.09, 0.09, 0.16])
        .expect("reference omega");
    PopulationModel::new(reference_theta(), omega, ResidualError { prop: 0.12, add: 0.25 }).expect("reference model")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub n_patients: usize,
    /// Dosing days, starting on POD 1.
    pub n_days: u32,
    /// First POD with a 06:00 trough.
    pub first_trough_pod: u32,
    /// Days between troughs.
    pub trough_every: u32,
    /// Extra samples on trough days, hours after the morning dose.
    pub extra_samples_h: Vec<f64>,
    /// Initial dose range, mg per administration.
    pub initial_dose_mg: (f64, f64),
    /// Re-dose toward the target midpoint after each trough.
    pub adjust_doses: bool,
    /// Probability that a lab value is measured on a given day (POD 1 always measured).
    pub lab_probability: f64,
    /// Transplant dates are drawn uniformly within a year from this date.
    pub first_transplant: NaiveDate,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            n_patients: 10,
            n_days: 21,
            first_trough_pod: 2,
            trough_every: 1,
            extra_samples_h: Vec::new(),
            initial_dose_mg: (1.5, 4.0),
            adjust_doses: true,
            lab_probability: 0.7,
            first_transplant: NaiveDate::from_ymd_opt(2019, 1, 1).expect("date"),
        }
    }
}

/// Generated cohort with the quantities it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    /// Raw cohort (lab gaps not filled).
    pub cohort: Cohort,
    pub etas: BTreeMap<String, Vec<f64>>,
    /// Noise-free concentration at each non-missing observation, ng/mL.
    pub true_concentrations: BTreeMap<String, Vec<f64>>,
}

impl SyntheticCohort {
    /// The cohort with lab gaps filled by LOCF.
    pub fn filled(&self) -> Result<Cohort> {
        locf_fill(&self.cohort)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_eta(rng: &mut ChaCha8Rng, omega: &Omega) -> Result<Vec<f64>> {
    let l = omega.cholesky()?;
    let z = DVector::from_fn(omega.dim(), |_, _| normal(rng));
    Ok((l * z).iter().copied().collect())
}

fn lab_series(rng: &mut ChaCha8Rng, opts: &SynthOptions) -> BTreeMap<u32, CovariateRecord> {
    let alb0 = 24.0 + 4.0 * normal(rng);
    let alb_inf = 36.0 + 3.0 * normal(rng);
    let asat0 = (5.5 + 0.6 * normal(rng)).exp();
    let asat_inf = (3.6 + 0.3 * normal(rng)).exp();
    let weight = (70.0 + 12.0 * normal(rng)).clamp(40.0, 130.0);
    let mut out = BTreeMap::new();
    for pod in 1..=opts.n_days {
        let d = f64::from(pod);
        let measured = |rng: &mut ChaCha8Rng| pod == 1 || rng.random::<f64>() < opts.lab_probability;
        let alb = measured(rng).then(|| {
            let m = alb_inf + (alb0 - alb_inf) * (-d / 10.0).exp();
            (m * (1.0 + 0.05 * normal(rng))).max(10.0)
        });
        let asat = measured(rng).then(|| {
            let m = asat_inf + (asat0 - asat_inf) * (-d / 3.0).exp();
            (m * (1.0 + 0.1 * normal(rng))).max(5.0)
        });
        out.insert(
            pod,
            CovariateRecord {
                alb: alb.map(|v| (v * 10.0).round() / 10.0),
                asat: asat.map(f64::round),
                weight: (pod == 1).then_some((weight * 10.0).round() / 10.0),
            },
        );
    }
    out
}

/// Draws `opts.n_patients` patients from `model` with RNG seed `seed`.
pub fn synthetic_cohort(model: &PopulationModel, opts: &SynthOptions, seed: u64) -> Result<SyntheticCohort> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = TargetRange::default();
    let mut patients = Vec::with_capacity(opts.n_patients);
    let mut etas = BTreeMap::new();
    let mut truths = BTreeMap::new();
    for i in 0..opts.n_patients {
        let id = format!("S{:03}", i + 1);
        let eta = draw_eta(&mut rng, &model.omega)?;
        let labs = lab_series(&mut rng, opts);
        let tx = opts.first_transplant + chrono::Days::new(rng.random_range(0..365));
        let (lo, hi) = opts.initial_dose_mg;
        let mut dose = round_dose(lo + (hi - lo) * rng.random::<f64>());

        let mut events: Vec<Event> = Vec::new();
        let mut truth = Vec::new();
        let mut filled = EventTimeline::new(id.clone(), Vec::new(), labs.clone(), 1)?;
        locf_fill_timeline(&mut filled)?;
        let filled_covs = filled.covariates().clone();

        for pod in 1..=opts.n_days {
            let mut next_dose = dose;
            let day0 = f64::from(pod - 1) * 24.0;
            let trough_day = pod >= opts.first_trough_pod && (pod - opts.first_trough_pod) % opts.trough_every == 0;
            if trough_day {
                let mut sample_times = vec![day0 + TROUGH_H];
                sample_times.extend(opts.extra_samples_h.iter().map(|h| day0 + MORNING_DOSE_H + h));
                let mut probe = events.clone();
                probe.push(Event::Dose {
                    time: day0 + MORNING_DOSE_H,
                    amount: dose,
                });
                for &t in &sample_times {
                    probe.push(Event::Observation {
                        time: t,
                        value: None,
                        mdv: true,
                    });
                }
                let tl = EventTimeline::new(id.clone(), probe, filled_covs.clone(), 1)?;
                let conc = SimulationPlan::new(&tl)?.run(&model.theta, model.eta_map(), &eta)?;
                let n_prev = conc.len() - sample_times.len();
                for (k, &t) in sample_times.iter().enumerate() {
                    let f = conc[n_prev + k];
                    let y = noisy(&mut rng, f, &model.sigma);
                    events.push(Event::Observation {
                        time: t,
                        value: Some(y),
                        mdv: false,
                    });
                    truth.push(f);
                    if k == 0 && opts.adjust_doses && pod > 1 {
                        let mid = target.band_at(pod).midpoint();
                        next_dose = round_dose(dose * mid / y).min(10.0);
                    }
                }
            }
            events.push(Event::Dose {
                time: day0 + MORNING_DOSE_H,
                amount: dose,
            });
            events.push(Event::Dose {
                time: day0 + EVENING_DOSE_H,
                amount: dose,
            });
            dose = next_dose;
        }
        let tl = EventTimeline::new(id.clone(), events, labs, 1)?.with_transplant_date(Some(tx));
        patients.push(tl);
        etas.insert(id.clone(), eta);
        truths.insert(id, truth);
    }
    let mut cohort = Cohort::new(patients, Provenance::default())?;
    let text = write_dataset(&cohort)?;
    cohort.provenance = Provenance {
        source: format!("synthetic(seed={seed})"),
        digest: hex::encode(Sha256::digest(text.as_bytes())),
        n_rows: text.lines().count().saturating_sub(1),
        n_rows_accepted: text.lines().count().saturating_sub(1),
        ..Provenance::default()
    };
    Ok(SyntheticCohort {
        cohort,
        etas,
        true_concentrations: truths,
    })
}

/// `f·(1 + σp·ε₁) + σa·ε₂`, redrawn until positive, rounded to 0.01 ng/mL.
fn noisy(rng: &mut ChaCha8Rng, f: f64, sigma: &ResidualError) -> f64 {
    for _ in 0..100 {
        let y = f * (1.0 + sigma.prop * normal(rng)) + sigma.add * normal(rng);
        let y = (y * 100.0).round() / 100.0;
        if y > 0.0 {
            return y;
        }
    }
    f.max(0.01)
}

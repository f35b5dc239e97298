//! Forecasting on synthetic patients: dose recommendations, self-consistency, comparisons.

use tdm_core::estimator::{map_estimate, PopulationModel, ResidualError};
use tdm_core::forecast::{
    evaluate, predict_at_times, predict_observed, recommend_dose, ForecastMode, TargetRange, WilcoxonMethod,
    DOSE_STEP_MG,
};
use tdm_core::pk::{simulate, Event, EventTimeline};
use tdm_core::synth::{reference_model, synthetic_cohort, SynthOptions, EVENING_DOSE_H, MORNING_DOSE_H, TROUGH_H};

fn cohort(model: &PopulationModel, n_patients: usize, n_days: u32, seed: u64) -> Vec<EventTimeline> {
    let opts = SynthOptions {
        n_patients,
        n_days,
        ..SynthOptions::default()
    };
    synthetic_cohort(model, &opts, seed).unwrap().filled().unwrap().patients
}

/// Appends `days` of twice-daily `dose_mg` after the last recorded day.
fn with_plan(tl: &EventTimeline, days: u32, dose_mg: f64) -> EventTimeline {
    let (_, last) = tl.pod_span().unwrap();
    let mut out = tl.clone();
    out.extend_covariates_through(last + days);
    let doses = (0..days).flat_map(|d| {
        let day0 = f64::from(last + d) * 24.0;
        [MORNING_DOSE_H, EVENING_DOSE_H].map(|h| Event::Dose {
            time: day0 + h,
            amount: dose_mg,
        })
    });
    out.add_events(doses).unwrap();
    out
}

#[test]
fn recommended_dose_lands_in_band() {
    let model = reference_model();
    let target = TargetRange::default();
    let mut moved = 0;
    for tl in cohort(&model, 12, 10, 404) {
        let est = map_estimate(&tl, &model, tl.n_observed()).unwrap();
        assert!(est.converged);
        let current = tl.doses().last().unwrap().1;
        let (_, last) = tl.pod_span().unwrap();
        let trough = f64::from(last + 4) * 24.0 + TROUGH_H;

        let planned = with_plan(&tl, 5, current);
        let rec = recommend_dose(&planned, &model, &est, &target, trough).unwrap();
        assert_eq!(rec.current_dose_mg, current);
        assert_eq!(rec.trough_pod, last + 5);
        if rec.dose_mg != current {
            moved += 1;
        }

        // The recommendation assumes the whole regimen scales; apply it to the plan alone.
        let adjusted = with_plan(&tl, 5, rec.dose_mg);
        let got = predict_at_times(&adjusted, &model, &est.eta_hat, &[trough]).unwrap()[0];
        let band = target.band_at(rec.trough_pod);
        // Rounding moves the dose by at most 0.25 mg; doses before the plan are not rescaled
        // and contribute a small carry-over.
        let exact = current * rec.target_midpoint / rec.predicted_trough;
        let r = (DOSE_STEP_MG / 2.0) / exact + 0.02;
        let rel = (got.concentration / rec.target_midpoint - 1.0).abs();
        assert!(
            rel <= r,
            "{}: off the midpoint by {rel:.4}, allowed {r:.4}",
            tl.patient_id
        );
        assert!(
            band.low <= got.concentration && got.concentration <= band.high,
            "{}: {} mg -> {} mg gives {:.2} ng/mL, band {band:?}",
            tl.patient_id,
            current,
            rec.dose_mg,
            got.concentration
        );
    }
    assert!(moved > 0, "every recommendation kept the current dose");
}

#[test]
fn doubling_every_dose_doubles_the_forecast() {
    let model = reference_model();
    let tl = &cohort(&model, 1, 8, 405)[0];
    let est = map_estimate(tl, &model, 3).unwrap();
    let times: Vec<f64> = (0..48).map(|h| 7.0 * 24.0 + f64::from(h) * 0.5).collect();
    let base = predict_at_times(tl, &model, &est.eta_hat, &times).unwrap();
    let double = predict_at_times(&tl.scale_doses(2.0), &model, &est.eta_hat, &times).unwrap();
    for (a, b) in base.iter().zip(&double) {
        assert_eq!(a.time, b.time);
        assert!((b.concentration - 2.0 * a.concentration).abs() <= 1e-12 * a.concentration);
    }
}

/// Observations replaced by the typical-patient predictions themselves.
fn noise_free_typical(model: &PopulationModel, seed: u64) -> Vec<EventTimeline> {
    cohort(model, 8, 8, seed)
        .into_iter()
        .map(|tl| {
            let typical = simulate(&tl, &model.theta, model.eta_map(), &vec![0.0; model.n_eta()]).unwrap();
            let mut k = 0;
            let events = tl
                .events()
                .iter()
                .map(|e| match e {
                    Event::Observation { time, mdv: false, .. } => {
                        let value = Some(typical.points[k].concentration);
                        k += 1;
                        Event::Observation {
                            time: *time,
                            value,
                            mdv: false,
                        }
                    }
                    Event::Observation { .. } => {
                        k += 1;
                        e.clone()
                    }
                    d => d.clone(),
                })
                .collect();
            EventTimeline::new(tl.patient_id.clone(), events, tl.covariates().clone(), tl.pod_offset()).unwrap()
        })
        .collect()
}

#[test]
fn model_scored_on_its_own_noise_free_output() {
    // Additive error keeps the residual variance flat in η, so the posterior mode of a
    // noise-free typical profile is exactly η = 0.
    let mut model = reference_model();
    model.sigma = ResidualError { prop: 0.0, add: 0.5 };
    let patients = noise_free_typical(&model, 406);
    for tl in &patients {
        let pred = predict_observed(tl, &model, &[0.0; 3]).unwrap();
        let obs: Vec<f64> = tl.observed().into_iter().map(|(_, v)| v).collect();
        assert_eq!(pred, obs);
    }
    let report = evaluate(
        &patients,
        &[("self".to_string(), model)],
        ForecastMode::AllRemaining,
        &TargetRange::default(),
    )
    .unwrap();
    let m = &report.models[0];
    assert!(m.flagged.is_empty(), "{:?}", m.flagged);
    for row in &m.summary {
        assert!(row.mdpe.abs() < 1e-4, "{row:?}");
        assert!(row.mdape < 1e-4, "{row:?}");
        assert_eq!(row.f20, 100.0);
        assert!(row.satisfactory);
    }
    for r in m.records.iter().filter(|r| r.n_obs == 0) {
        assert_eq!(r.pe_percent, 0.0);
    }
}

#[test]
fn identical_models_show_no_difference() {
    let model = reference_model();
    let patients = cohort(&model, 6, 8, 407);
    let report = evaluate(
        &patients,
        &[("a".to_string(), model.clone()), ("b".to_string(), model)],
        ForecastMode::NextOne,
        &TargetRange::default(),
    )
    .unwrap();
    assert_eq!(report.models[0].records, report.models[1].records);
    assert_eq!(report.comparisons.len(), 2);
    for c in &report.comparisons {
        assert_eq!(c.result.p_value, 1.0);
        assert_eq!(c.result.p_adjusted, 1.0);
        assert_eq!(c.result.method, WilcoxonMethod::NoEvidence);
    }
}

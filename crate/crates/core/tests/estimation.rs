//! Population fitting and prior-weight search on small synthetic cohorts.

use nalgebra::DMatrix;
use tdm_core::data::Cohort;
use tdm_core::estimator::{
    fit_population, optimize_prior_weights, population_objective, FitOptions, Omega, OmegaPrior, PopulationModel,
    PriorSpec, ResidualError, ThetaPrior, WeightSearchOptions,
};
use tdm_core::pk::{EtaTarget, Event, EventTimeline, StructuralTheta};
use tdm_core::synth::{synthetic_cohort, SynthOptions};

/// Proportional error only, so the residual model carries no weakly identified parameter.
fn small_truth(tcl50: f64) -> PopulationModel {
    let omega = Omega::diagonal(vec![EtaTarget::Cl, EtaTarget::V], &[0.09, 0.09]).unwrap();
    PopulationModel::new(
        StructuralTheta::new(22.0, tcl50, 2.5, 450.0, 4.5),
        omega,
        ResidualError { prop: 0.12, add: 0.0 },
    )
    .unwrap()
    .fix("gamma")
    .unwrap()
}

fn cohort(truth: &PopulationModel, opts: SynthOptions, seed: u64) -> Cohort {
    synthetic_cohort(truth, &opts, seed).unwrap().filled().unwrap()
}

fn quick(max_evals: usize, covariance: bool) -> FitOptions {
    let mut o = FitOptions {
        covariance,
        ..FitOptions::default()
    };
    o.optimizer.max_evals = max_evals;
    o
}

fn prior_at(truth: &PopulationModel) -> PriorSpec {
    let t = &truth.theta;
    PriorSpec {
        theta: [("cl_max", t.cl_max), ("tcl50", t.tcl50), ("v_f", t.v_f)]
            .into_iter()
            .map(|(name, mean)| ThetaPrior {
                name: name.into(),
                mean,
                se: 0.2 * mean,
                weight: 1.0,
            })
            .collect(),
        omega: vec![OmegaPrior {
            etas: vec![EtaTarget::Cl, EtaTarget::V],
            matrix: DMatrix::from_diagonal_element(2, 2, 0.09),
            nu: 20.0,
            weight: 1.0,
        }],
    }
}

#[test]
fn fit_ignores_patient_order() {
    let truth = small_truth(4.0);
    let opts = SynthOptions {
        n_patients: 6,
        n_days: 6,
        ..SynthOptions::default()
    };
    let c = cohort(&truth, opts, 5);
    let mut reversed = c.patients.clone();
    reversed.reverse();
    reversed.rotate_left(2);
    let a = fit_population(&c.patients, &truth, None, &quick(300, false)).unwrap();
    let b = fit_population(&reversed, &truth, None, &quick(300, false)).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.objective.total.to_bits(), b.objective.total.to_bits());
    assert_eq!(a.n_function_evals, b.n_function_evals);
}

#[test]
fn objective_terms_add_up() {
    let truth = small_truth(4.0);
    let opts = SynthOptions {
        n_patients: 5,
        n_days: 5,
        ..SynthOptions::default()
    };
    let c = cohort(&truth, opts, 6);
    let mut shifted = prior_at(&truth);
    shifted.theta[0].mean *= 1.3;
    let fit = fit_population(&c.patients, &truth, Some(&shifted), &quick(200, false)).unwrap();
    let o = fit.objective;
    assert_eq!(o.total, o.data + o.penalty.total());
    assert!(o.penalty.theta > 0.0);
    let again = population_objective(&c.patients, &fit.model, Some(&shifted)).unwrap();
    assert_eq!(again.penalty, o.penalty);
    assert!((again.data - o.data).abs() <= 1e-6 * o.data.abs());
}

#[test]
fn degenerate_cohort_is_flagged() {
    let truth = small_truth(4.0);
    let patients: Vec<EventTimeline> = cohort(
        &truth,
        SynthOptions {
            n_patients: 3,
            n_days: 4,
            ..SynthOptions::default()
        },
        7,
    )
    .patients
    .into_iter()
    .map(|tl| {
        let events = tl
            .events()
            .iter()
            .map(|e| match e {
                Event::Observation { time, mdv, .. } => Event::Observation {
                    time: *time,
                    value: Some(7.5),
                    mdv: *mdv,
                },
                d => d.clone(),
            })
            .collect();
        EventTimeline::new(tl.patient_id.clone(), events, tl.covariates().clone(), tl.pod_offset()).unwrap()
    })
    .collect();
    let fit = fit_population(&patients, &truth, None, &quick(100, false)).unwrap();
    assert!(fit.degenerate);
    assert!(fit.warnings.iter().any(|w| w.contains("degenerate")));
}

#[test]
fn single_weight_grid_is_the_informative_fit() {
    let truth = small_truth(4.0);
    let c = cohort(
        &truth,
        SynthOptions {
            n_patients: 6,
            n_days: 6,
            ..SynthOptions::default()
        },
        8,
    );
    let prior = prior_at(&truth);
    let options = WeightSearchOptions {
        fit: quick(300, true),
        ..WeightSearchOptions::default()
    };
    let search = optimize_prior_weights(&c.patients, &truth, &prior, &[1.0], &options).unwrap();
    let direct = fit_population(&c.patients, &truth, Some(&prior), &options.fit).unwrap();
    assert_eq!(search.fit.model, direct.model);
    assert_eq!(search.prior, prior);
    assert_eq!(search.trials.len(), 1);
}

#[test]
fn weight_search_rich_versus_unidentified() {
    let options = WeightSearchOptions {
        fit: quick(3000, true),
        ..WeightSearchOptions::default()
    };
    let grid = [1.0, 0.5, 0.0];

    // Samples from POD 2 span the clearance rise: everything is identified.
    let truth = small_truth(4.0);
    let rich = cohort(
        &truth,
        SynthOptions {
            n_patients: 30,
            n_days: 14,
            extra_samples_h: vec![2.0],
            ..SynthOptions::default()
        },
        31,
    );
    let search = optimize_prior_weights(&rich.patients, &truth, &prior_at(&truth), &grid, &options).unwrap();
    for b in search.prior.blocks() {
        assert_eq!(
            search.prior.weight(b),
            0.0,
            "{}: {:?}",
            search.prior.block_name(b),
            search.trials
        );
    }

    // TCL50 = 1.5 days but sampling starts on POD 29: clearance has long plateaued, TCL50 is
    // not identified by the data and keeps its prior.
    let truth = small_truth(1.5);
    let late = cohort(
        &truth,
        SynthOptions {
            n_patients: 30,
            n_days: 35,
            first_trough_pod: 29,
            extra_samples_h: vec![2.0],
            ..SynthOptions::default()
        },
        32,
    );
    let search = optimize_prior_weights(&late.patients, &truth, &prior_at(&truth), &grid, &options).unwrap();
    for b in search.prior.blocks() {
        let name = search.prior.block_name(b);
        let w = search.prior.weight(b);
        if name == "tcl50" {
            assert!(w > 0.0, "tcl50 weight {w}: {:?}", search.trials);
        } else {
            assert_eq!(w, 0.0, "{name}: {:?}", search.trials);
        }
    }
}

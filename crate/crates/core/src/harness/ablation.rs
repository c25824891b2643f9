//! Loss-term, fusion and augmentation ablations.

use crate::augment::{AugmentationPolicy, SimClrParams, Transform};
use crate::model::FusionKind;
use crate::objectives::LossTerms;
use crate::train::Objective;
use crate::Result;

use super::{run_experiment, ExperimentOutcome, ExperimentPlan, MethodSpec};

fn sub_plan(plan: &ExperimentPlan, dir: &str, methods: Vec<MethodSpec>) -> ExperimentPlan {
    ExperimentPlan {
        name: format!("{}-{dir}", plan.name),
        methods,
        output_dir: plan.output_dir.join(dir),
        ..plan.clone()
    }
}

/// `sum_li` optimizes only the projection terms, `l_only` only the joint
/// term, `comm` both.
pub fn loss_rows() -> Vec<MethodSpec> {
    [
        ("sum_li", LossTerms::projections_only()),
        ("l_only", LossTerms::joint_only()),
        ("comm", LossTerms::default()),
    ]
    .into_iter()
    .map(|(name, terms)| MethodSpec {
        loss_terms: Some(terms),
        ..MethodSpec::new(name, Objective::Comm)
    })
    .collect()
}

/// Epoch-resolved probe curves for each loss variant. Without an explicit
/// schedule every tenth of training is probed.
pub fn ablate_loss(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    let mut p = sub_plan(plan, "ablate_loss", loss_rows());
    if p.probe_epochs.is_empty() {
        let e = p.epochs();
        p.probe_epochs = (1..=10).map(|k| (k * e / 10).max(1)).collect();
        p.probe_epochs.dedup();
    }
    run_experiment(&p)
}

pub fn fusion_rows(embed_dim: usize) -> Vec<MethodSpec> {
    vec![
        MethodSpec {
            fusion: Some(FusionKind::ConcatLinear {
                per_modality_dim: embed_dim,
            }),
            ..MethodSpec::new("concat_linear", Objective::Comm)
        },
        MethodSpec {
            fusion: Some(FusionKind::default()),
            ..MethodSpec::new("attention", Objective::Comm)
        },
    ]
}

/// Concatenation plus a linear map against the attention fusion block.
pub fn ablate_fusion(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    let d = plan.train_config(&MethodSpec::new("comm", Objective::Comm), 0).model.embed_dim;
    run_experiment(&sub_plan(plan, "ablate_fusion", fusion_rows(d)))
}

/// Full augmentation on the first modality with the second one untouched,
/// full on the first with crop removed on the second, and full on both.
pub fn augmentation_rows() -> Vec<MethodSpec> {
    let params = SimClrParams::default();
    let rows = [
        ("all_none", params.transform(), Transform::Identity),
        ("all_all_minus_crop", params.transform(), params.transform_without_crop()),
        ("all_all", params.transform(), params.transform()),
    ];
    rows.into_iter()
        .map(|(name, t1, t2)| MethodSpec {
            policy: Some(AugmentationPolicy::routed(name, [(0, t1), (1, t2)])),
            ..MethodSpec::new(name, Objective::Comm)
        })
        .collect()
}

pub fn ablate_augmentation(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    run_experiment(&sub_plan(plan, "ablate_aug", augmentation_rows()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_have_the_expected_shape() {
        let names: Vec<String> = loss_rows().into_iter().map(|m| m.name).collect();
        assert_eq!(names, ["sum_li", "l_only", "comm"]);
        assert_eq!(fusion_rows(512).len(), 2);
        let aug = augmentation_rows();
        assert_eq!(aug.len(), 3);
        for m in &aug {
            m.policy.as_ref().unwrap().validate().unwrap();
        }
        let first = aug[0].policy.as_ref().unwrap();
        assert_eq!(first.transform_for(1), Some(&Transform::Identity));
    }
}

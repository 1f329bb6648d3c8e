use zsda_core::pipeline::{
    run_experiment, stage1_train, stage2_finetune, zero_shot_eval, Context, DetectorHead, ExperimentConfig, Phase,
    TrainConfig,
};
use zsda_core::rng::DetRng;
use zsda_core::strategies::{
    loss_align, loss_relative, loss_semantic, rdd_total, RddBatch, RddMask, RddWeights,
};
use zsda_core::Error;

fn small() -> ExperimentConfig {
    let mut e = ExperimentConfig::default();
    let t = &mut e.train;
    t.stage1.iters = 30;
    t.stage1.lr_drop_iter = 20;
    t.stage1.val_every = 10;
    t.stage1.val_scenes = 2;
    t.stage2.iters = 60;
    t.stage2.lr_drop_iter = 30;
    t.eval.scenes = 6;
    t.source_scenes = 16;
    e
}

fn unit(rng: &mut DetRng, n: usize) -> Vec<f64> {
    let v = rng.gaussian_vec(n, 1.0);
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / s).collect()
}

#[test]
fn image_level_total_is_the_weighted_sum_of_its_terms() {
    let mut rng = DetRng::new(3);
    for _ in 0..50 {
        let n = 1 + rng.below(5);
        let b = RddBatch {
            e_i_s: (0..n).map(|_| unit(&mut rng, 8)).collect(),
            e_i_st: (0..n).map(|_| unit(&mut rng, 8)).collect(),
            t_i_s: unit(&mut rng, 8),
            t_i_t: unit(&mut rng, 8),
        };
        let w = RddWeights { align: rng.range(0.1, 2.0), semantic: rng.range(0.1, 2.0), relative: rng.range(0.1, 2.0) };
        let terms = [loss_align(&b).unwrap(), loss_semantic(&b).unwrap(), loss_relative(&b).unwrap()];
        for bits in 1..8u8 {
            let mask = RddMask { align: bits & 1 != 0, semantic: bits & 2 != 0, relative: bits & 4 != 0 };
            let want: f64 = [(mask.align, w.align), (mask.semantic, w.semantic), (mask.relative, w.relative)]
                .iter()
                .zip(terms)
                .filter(|((on, _), _)| *on)
                .map(|((_, wt), v)| wt * v)
                .sum();
            let got = rdd_total(&b, &w, &mask).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn loss_levels_gate_their_prompt_encodings() {
    let exp = small();
    let ctx = Context::new(&exp).unwrap();
    let head = DetectorHead::from_clip(&ctx.clip);

    let mut img_only = exp.train.clone();
    img_only.toggles.ins_level_on = false;
    let c = stage1_train(&ctx, &img_only, &head).unwrap().report.counters;
    assert_eq!(c.instance_prompt_encodings, 0);
    assert!(c.image_prompt_encodings > 0);

    let mut ins_only = exp.train.clone();
    ins_only.toggles.img_level_on = false;
    let c = stage1_train(&ctx, &ins_only, &head).unwrap().report.counters;
    assert_eq!(c.image_prompt_encodings, 0);
    assert!(c.instance_prompt_encodings > 0);
}

#[test]
fn stage_one_without_a_loss_level_is_rejected() {
    let exp = small();
    let ctx = Context::new(&exp).unwrap();
    let mut t = exp.train.clone();
    t.toggles.img_level_on = false;
    t.toggles.ins_level_on = false;
    let err = stage1_train(&ctx, &t, &DetectorHead::from_clip(&ctx.clip)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn full_runs_are_deterministic() {
    let exp = small();
    let ctx = Context::new(&exp).unwrap();
    let a = run_experiment(&ctx, &exp.train).unwrap();
    let b = run_experiment(&ctx, &exp.train).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    assert_eq!(a.head, b.head);

    let mut other = exp.train.clone();
    other.seed += 1;
    let c = run_experiment(&ctx, &other).unwrap();
    assert_ne!(a.report.loss_history, c.report.loss_history);
}

#[test]
fn baseline_skips_stage_one() {
    let mut exp = small();
    exp.train = TrainConfig { toggles: TrainConfig::baseline().toggles, ..exp.train };
    let ctx = Context::new(&exp).unwrap();
    let out = run_experiment(&ctx, &exp.train).unwrap();
    assert_eq!(out.report.phase_history(Phase::Stage1).count(), 0);
    assert!(out.report.mad_of_validation_loss.is_none());
    assert_eq!(out.report.counters.stage2_enhanced_iterations, 0);
    assert!(out.frozen.enhance.is_identity());
}

#[test]
fn stage_two_enhances_about_half_the_iterations() {
    let mut exp = small();
    exp.train.stage2.iters = 2000;
    exp.train.stage2.lr_drop_iter = 1000;
    exp.train.stage2.proposals_per_scene = 4;
    let ctx = Context::new(&exp).unwrap();
    let frozen = zsda_core::pipeline::initial_params(&ctx, &exp.train).unwrap();
    let head = DetectorHead::from_clip(&ctx.clip);
    let c = stage2_finetune(&ctx, &exp.train, Some(&frozen), head.clone()).unwrap().report.counters;
    assert_eq!(c.stage2_iterations, 2000);
    let f = c.stage2_enhanced_iterations as f64 / 2000.0;
    assert!((0.45..=0.55).contains(&f), "{f}");

    let mut never = exp.train.clone();
    never.stage2.enhance_prob = 0.0;
    let c = stage2_finetune(&ctx, &never, Some(&frozen), head.clone()).unwrap().report.counters;
    assert_eq!(c.stage2_enhanced_iterations, 0);

    assert!(matches!(stage2_finetune(&ctx, &exp.train, None, head), Err(Error::State(_))));
}

#[test]
fn eval_rejects_unknown_domains() {
    let exp = small();
    let ctx = Context::new(&exp).unwrap();
    let frozen = zsda_core::pipeline::initial_params(&ctx, &exp.train).unwrap();
    let head = DetectorHead::from_clip(&ctx.clip);
    assert!(zero_shot_eval(&ctx, &exp.train, &head, &frozen, "underwater").is_err());
    let m = zero_shot_eval(&ctx, &exp.train, &head, &frozen, "night rainy").unwrap();
    assert!((0.0..=1.0).contains(&m.map));
    assert_eq!(m.enhance_invocations, 0);
}

#[test]
fn logged_totals_are_the_sum_of_their_components() {
    let exp = small();
    let ctx = Context::new(&exp).unwrap();
    for pns in [zsda_core::strategies::PnsMode::Ce, zsda_core::strategies::PnsMode::BgPlusC] {
        let t = TrainConfig { pns_mode: pns, ..exp.train.clone() };
        let r = run_experiment(&ctx, &t).unwrap().report;
        assert!(r.phase_history(Phase::Stage1).count() > 0 && r.phase_history(Phase::Stage2).count() > 0);
        for rec in r.loss_history.iter().chain(&r.validation_history) {
            let sum: f64 = rec.components().iter().sum();
            assert!((rec.total - sum).abs() <= 1e-12 * sum.abs().max(1.0), "{rec:?}");
        }
    }
}

#[test]
fn stage_two_regression_loss_descends() {
    let exp = ExperimentConfig::default();
    let ctx = Context::new(&exp).unwrap();
    let frozen = zsda_core::pipeline::initial_params(&ctx, &exp.train).unwrap();
    let mut wins = 0;
    for seed in 0..5 {
        let t = TrainConfig { seed, ..exp.train.clone() };
        let r = stage2_finetune(&ctx, &t, Some(&frozen), DetectorHead::from_clip(&ctx.clip)).unwrap().report;
        let reg: Vec<f64> = r.phase_history(Phase::Stage2).map(|x| x.regression.unwrap()).collect();
        let tenth = reg.len() / 10;
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        wins += (mean(&reg[reg.len() - tenth..]) < mean(&reg[..tenth])) as usize;
    }
    assert!(wins >= 4, "{wins}/5");
}

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use zsda_core::feature::FeatureMap;
use zsda_core::pipeline::{run_gradient_suite, stage1_train, Context, DetectorHead, ExperimentConfig};
use zsda_core::rng::DetRng;
use zsda_core::simworld::{evaluate_ap50, Detection, GroundTruth};
use zsda_core::strategies::detect_prob;
use zsda_core::ure::{enhance, EnhanceMode, EnhanceParams, DEFAULT_GRID};

fn encoders(c: &mut Criterion) {
    let ctx = Context::new(&ExperimentConfig::default()).unwrap();
    let ch = ctx.clip.channels();
    let mut rng = DetRng::new(1);
    let fm = FeatureMap::new(ch, 21, 21, rng.gaussian_vec(ch * 21 * 21, 1.0)).unwrap();
    let mut params = EnhanceParams::identity(ch, DEFAULT_GRID, EnhanceMode::MuAndSigma).unwrap();
    params.e_sigma_mut().values_mut().iter_mut().for_each(|v| *v = 1.1);

    c.bench_function("image_encode_21x21", |b| b.iter(|| ctx.clip.image_encode(black_box(&fm)).unwrap()));
    c.bench_function("enhance_7x7", |b| b.iter(|| enhance(black_box(&fm), &params).unwrap()));
    let rows = ctx.clip.embed_text("a photo of a car taken in the rain").unwrap();
    c.bench_function("text_encode", |b| b.iter(|| ctx.clip.text_encode(black_box(&rows)).unwrap()));

    let d = ctx.clip.d_emb();
    let e = rng.gaussian_vec(d, 1.0);
    let table: Vec<Vec<f64>> = (0..8).map(|_| rng.gaussian_vec(d, 1.0)).collect();
    c.bench_function("detect_prob_8", |b| b.iter(|| detect_prob(black_box(&e), &table, 0.05).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let mut rng = DetRng::new(2);
    let bbox = |rng: &mut DetRng| {
        let (x, y) = (rng.range(0.0, 20.0), rng.range(0.0, 20.0));
        [x, y, x + rng.range(2.0, 8.0), y + rng.range(2.0, 8.0)]
    };
    let gts: Vec<GroundTruth> = (0..500)
        .map(|i| GroundTruth { image: i / 5, category: rng.below(7), bbox: bbox(&mut rng) })
        .collect();
    let preds: Vec<Detection> = (0..3000)
        .map(|i| Detection { image: i / 30, category: rng.below(7), score: rng.uniform(), bbox: bbox(&mut rng) })
        .collect();
    c.bench_function("evaluate_ap50_3000", |b| b.iter(|| evaluate_ap50(black_box(&preds), &gts, 7, 0.5).unwrap()));
}

fn training(c: &mut Criterion) {
    let mut exp = ExperimentConfig::default();
    exp.train.stage1.iters = 20;
    exp.train.stage1.lr_drop_iter = 10;
    exp.train.stage1.val_every = 20;
    exp.train.stage1.val_scenes = 2;
    exp.train.source_scenes = 8;
    let ctx = Context::new(&exp).unwrap();
    let head = DetectorHead::from_clip(&ctx.clip);
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    g.bench_function("stage1_20_iters", |b| b.iter(|| stage1_train(&ctx, &exp.train, &head).unwrap()));
    g.bench_function("gradient_suite_1_seed", |b| b.iter(|| run_gradient_suite(1, 0.0).unwrap()));
    g.finish();
}

criterion_group!(benches, encoders, metrics, training);
criterion_main!(benches);

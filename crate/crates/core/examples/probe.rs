use roadloc_core::embed::{train, EmbeddingModel, TrainSchedule, Triplet, TripletSource};
use roadloc_core::eval::*;
use roadloc_core::metrics::accuracy_metrics;
use roadloc_core::retrieval::{build_index, calibrate_threshold, coarse_localize_filtered};
use roadloc_core::samplers::*;
use roadloc_core::geo::heading_diff;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

struct WeightedSource<'a> { db: &'a FrameDB, w_reg: f64, w_hard: f64 }
impl TripletSource for WeightedSource<'_> {
    fn sample(&self, rng: &mut ChaCha12Rng) -> Option<Triplet> {
        for _ in 0..12 {
            let u: f64 = rng.random();
            let t = if u < self.w_reg { sample_regular(self.db, rng) }
                else if u < self.w_reg + self.w_hard { sample_hard_negative(self.db, rng) }
                else { sample_video(self.db, rng) };
            if t.is_some() { return t; }
        }
        None
    }
}

fn pct(v: &mut Vec<f64>, p: f64) -> f64 {
    v.sort_by(|a,b| a.partial_cmp(b).unwrap());
    v[((v.len()-1) as f64 * p) as usize]
}

fn band(db: &FrameDB, model: &EmbeddingModel, lo: f64, hi: f64, aligned: bool, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = roadloc_core::rng::rng_for(seed, "band");
    let tol = 20f64.to_radians();
    let mut out = Vec::new();
    while out.len() < n {
        let i = rng.random_range(0..db.len() as u32);
        let a = db.frame(i);
        let cands: Vec<u32> = db.within_radius((a.pose.x, a.pose.y), hi).into_iter()
            .filter(|&j| { let b = db.frame(j); let d = a.pose.distance_to(&b.pose);
                j != i && b.ride_id != a.ride_id && d >= lo && d <= hi && (!aligned || heading_diff(a.pose.heading, b.pose.heading) <= tol) })
            .collect();
        if cands.is_empty() { continue; }
        let b = db.frame(cands[rng.random_range(0..cands.len())]);
        out.push(model.embed(&a.raw_feature).unwrap().distance(&model.embed(&b.raw_feature).unwrap()));
    }
    out
}

fn main() {
    let config = BenchmarkConfig::standard();
    let world = build_world(&config).unwrap();
    let (rides, _) = simulate_rides(&config, &world).unwrap();
    let training = training_frames(&config, &rides);
    let db = FrameDB::build(training);
    let validation = validation_frames(&config, db.frames());

    // query/keyframe setup shared across variants
    let in_area = test_area_frames(&config, &rides);
    let (keyframes, mut leftovers) = select_keyframes(in_area, 10.0, config.keyframes_per_cell);
    use rand::seq::SliceRandom;
    let mut qrng = roadloc_core::rng::rng_for(config.seed, "query-subsample");
    leftovers.shuffle(&mut qrng);
    leftovers.truncate(800);
    let queries = leftovers;

    let variants: Vec<(&str, usize, usize, f64, f64, f64)> = vec![
        // name, steps, batch, max_lr, w_reg, w_hard
        ("uni-15k-b8",            15_000, 8,  0.003, 1.0/3.0, 1.0/3.0),
        ("w50/25/25-20k-b8",      20_000, 8,  0.003, 0.5, 0.25),
        ("w50/25/25-25k-b16-lr2", 25_000, 16, 0.002, 0.5, 0.25),
        ("reg-only-15k-b8",       15_000, 8,  0.003, 1.0, 0.0),
    ];
    for (name, steps, batch, lr, w_reg, w_hard) in variants {
        let schedule = TrainSchedule { steps, batch_size: batch, max_lr: lr, seed: 42, ..TrainSchedule::default() };
        let src = WeightedSource { db: &db, w_reg, w_hard };
        let (m, _) = train(EmbeddingModel::new(config.world.raw_dim(), 4242), &src, &schedule).unwrap();
        let thr = calibrate_threshold(&m, &validation).unwrap();
        let mut pos = band(&db, &m, 0.0, 10.0, true, 500, 1);
        let mut far = band(&db, &m, 150.0, 400.0, false, 500, 2);
        let p_false = far.iter().filter(|d| **d < thr).count() as f64 / far.len() as f64;
        let index = build_index(&keyframes, &m).unwrap();
        let mut mes = Vec::new();
        for &budget in &[50.0, 200.0] {
            let tag = format!("probe-distort/{budget}");
            let errors: Vec<Option<f64>> = queries.iter().map(|q| {
                let mut rng = roadloc_core::rng::rng_for_indexed(config.seed, &tag, q.frame_id);
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let r = budget * rng.random::<f64>().sqrt();
                let fix = roadloc_core::world::NoisyFix {
                    position: roadloc_core::GeoPose::new(q.pose.x + r*ang.cos(), q.pose.y + r*ang.sin(), q.pose.heading),
                    reported_accuracy: budget, true_error: r };
                let desc = m.embed(&q.raw_feature).unwrap();
                coarse_localize_filtered(&index, &desc, &fix, budget, thr, &config.retrieval.params(), Some(q.ride_id)).unwrap()
                    .map(|f| (f.position.x - q.pose.x).hypot(f.position.y - q.pose.y))
            }).collect();
            let rep = accuracy_metrics(&errors).unwrap();
            mes.push((budget, rep.mean_error, rep.recall));
        }
        println!("{name:18} thr={thr:.3} pos95={:.2} far05={:.2} P(false)={:.3} | ME50={:.1} rec={:.2} | ME200={:.1} rec={:.2}",
            pct(&mut pos, 0.95), pct(&mut far, 0.05), p_false, mes[0].1, mes[0].2, mes[1].1, mes[1].2);
    }
}

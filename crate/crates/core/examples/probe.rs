//! Scratch experiment runner for tuning the polar approach.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use plaqkit::eval;
use plaqkit::nn::model::{ArchitectureConfig, ModelInput, PolarRcnn};
use plaqkit::nn::train::{self, TrainConfig};
use plaqkit::phantom::PhantomSpec;
use plaqkit::pipeline::{
    self, apply_polar_augment, draw_rigid, ApproachConfig, ApproachKind, GeometryConfig, Needs,
    Payload, Target,
};
use plaqkit::radiomics::RadiomicsConfig;
use plaqkit::rng;

fn main() {
    let spec = PhantomSpec::default();
    let geometry = GeometryConfig::default();
    let radiomics = RadiomicsConfig::default();
    let needs = Needs {
        features: false,
        images: true,
        shapes: false,
    };
    let t0 = Instant::now();
    let bank = pipeline::build_bank(&spec, &geometry, &radiomics, needs).unwrap();
    eprintln!("bank: {:.0}s", t0.elapsed().as_secs_f64());

    let target = Target::Stenosis50;
    let cfg = ApproachConfig::for_variant(ApproachKind::Rcnn2dPolar);

    let mut order: Vec<String> = Vec::new();
    let mut positive: HashMap<String, bool> = HashMap::new();
    for e in &bank.entries {
        let id = e.record.patient.clone();
        if !positive.contains_key(&id) {
            order.push(id.clone());
        }
        let flag = positive.entry(id).or_insert(false);
        *flag = *flag || target.label(&e.record);
    }
    let patients: Vec<(String, bool)> = order
        .iter()
        .map(|id| (id.clone(), positive[id]))
        .collect();
    let folds =
        eval::stratified_patient_kfold(&patients, 10, rng::stable_hash(42, "fold_split", &[0]))
            .unwrap();

    for f in [0usize, 1, 2] {
        let split = &folds[f];
        fn member(ids: &[String]) -> HashSet<&str> {
            ids.iter().map(|s| s.as_str()).collect()
        }
        let (tr, va, te) = (member(&split.train), member(&split.val), member(&split.test));
        let mut train_s = Vec::new();
        let mut val_s = Vec::new();
        let mut test_s = Vec::new();
        for e in &bank.entries {
            let id = e.record.patient.as_str();
            let s = pipeline::make_sample(e, cfg.variant, target).unwrap();
            if tr.contains(id) {
                train_s.push(s);
            } else if va.contains(id) {
                val_s.push(s);
            } else if te.contains(id) {
                test_s.push(s);
            }
        }
        let fold_seed = pipeline::fold_seed(42, &cfg, target, f);
        let polar_of = |s: &pipeline::LesionSample| match &s.payload {
            Payload::PolarSeq { polar, .. } => ModelInput::Cubes(polar.clone()),
            _ => unreachable!(),
        };
        let carts: Vec<_> = train_s
            .iter()
            .map(|s| match &s.payload {
                Payload::PolarSeq { cart, .. } => cart.clone(),
                _ => unreachable!(),
            })
            .collect();
        let train: Vec<(ModelInput, bool)> =
            train_s.iter().map(|s| (polar_of(s), s.label)).collect();
        let val: Vec<(ModelInput, bool)> = val_s.iter().map(|s| (polar_of(s), s.label)).collect();
        let arch = ArchitectureConfig {
            seed: rng::stable_hash(fold_seed, "arch", &[0]),
            ..cfg.arch.clone()
        };
        let geom = cfg.geometry.clone();
        let in_shape = [geom.cube_len, geom.polar.angles, geom.polar.radii];
        let mut model = PolarRcnn::new(&arch, in_shape).unwrap();
        let tcfg = TrainConfig {
            seed: rng::stable_hash(fold_seed, "train", &[0]),
            ..cfg.train.clone()
        };
        let aug = cfg.augment.clone();
        let augment = move |x: &ModelInput, i: usize, r: &mut rand_chacha::ChaCha8Rng| {
            if !aug.enabled {
                return x.clone();
            }
            let draw = draw_rigid(&aug, r);
            let arrays =
                apply_polar_augment(&carts[i], geom.in_plane_mm, &geom.polar, &draw, aug.sigma, r)
                    .unwrap();
            ModelInput::Cubes(arrays)
        };
        let log = train::train_loop(&mut model, &train, &val, &tcfg, augment).unwrap();
        let test_inputs: Vec<ModelInput> = test_s.iter().map(polar_of).collect();
        let scores = train::predict(&mut model, &test_inputs).unwrap();
        let labels: Vec<bool> = test_s.iter().map(|s| s.label).collect();
        let auc = eval::roc_auc(&scores, &labels).unwrap();
        eprintln!(
            "fold {f}: n_train {} n_val {} n_test {} | best epoch {} val {:.3} | test auc {:.3}",
            train.len(),
            val.len(),
            test_s.len(),
            log.best_epoch,
            log.best_val_auc,
            auc
        );
        for e in &log.epochs {
            if e.epoch % 5 == 0 || e.epoch <= 3 {
                eprintln!("  epoch {:>3}  loss {:.4}  val {:.3}", e.epoch, e.train_loss, e.val_auc);
            }
        }
    }
}

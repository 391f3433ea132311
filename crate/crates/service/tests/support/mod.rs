#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use markguard_core::decision::{Label, ScoredSet};
use markguard_core::nn::{build, SMALL_CONV};
use markguard_core::pipeline::Stages;
use markguard_core::synth::{generate_one, GenConfig, SplitCounts};
use markguard_core::training::{score_examples, train_on, ModelArtifact, PreparedData, TrainConfig};
use markguard_service::{ModelRegistry, RegisteredModel, Service, ServiceConfig};
use tempfile::TempDir;

pub fn gen_config() -> GenConfig {
    let c = SplitCounts { train: 200, val: 80, test: 8 };
    GenConfig {
        n_genuine: c,
        n_counterfeit: c,
        severity: 8.0,
        seed: 21,
        ..GenConfig::default()
    }
}

pub struct Fixture {
    pub trained: ModelArtifact,
    pub trained_val: ScoredSet,
    pub random: ModelArtifact,
    pub random_val: ScoredSet,
    pub images: &'static [(Vec<u8>, Label)],
}

/// PNG bytes and truth of the test-split slots.
pub fn test_images() -> &'static [(Vec<u8>, Label)] {
    static I: OnceLock<Vec<(Vec<u8>, Label)>> = OnceLock::new();
    I.get_or_init(|| {
        let cfg = gen_config();
        let first_test = 2 * (cfg.n_genuine.train + cfg.n_genuine.val);
        (first_test..cfg.total())
            .map(|i| {
                let s = generate_one(&cfg, i, format!("{i}.png")).unwrap();
                (s.image.encode_png(), s.record.label)
            })
            .collect()
    })
}

/// An untrained network with a made-up validation set, for tests that
/// need a model but not a good one.
pub fn light_model() -> RegisteredModel {
    let art = ModelArtifact::from_network(&build(SMALL_CONV, 7).unwrap(), 7);
    let val = ScoredSet::from_pairs((0..40).map(|i| {
        let label = if i % 2 == 0 { Label::Genuine } else { Label::Counterfeit };
        let s = (i as f64 + 0.5) / 40.0;
        (if i % 5 == 0 { 1.0 - s } else { s }, label)
    }))
    .unwrap();
    RegisteredModel::from_artifact(&art, Some(val)).unwrap()
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = gen_config();
        let data = PreparedData::from_synth(&cfg, &Stages::standard()).unwrap();
        let tc = TrainConfig {
            epochs_max: 30,
            seed: 4,
            ..TrainConfig::default()
        };
        let (trained, _) = train_on(&data, &tc).unwrap();
        let trained_val = score_examples(&trained.handle().unwrap(), &data.val).unwrap();
        let random = ModelArtifact::from_network(&build(SMALL_CONV, 99).unwrap(), 99);
        let random_val = score_examples(&random.handle().unwrap(), &data.val).unwrap();
        Fixture {
            trained,
            trained_val,
            random,
            random_val,
            images: test_images(),
        }
    })
}

pub fn genuine_images() -> impl Iterator<Item = &'static [u8]> {
    test_images().iter().filter(|(_, l)| *l == Label::Genuine).map(|(b, _)| b.as_slice())
}

pub fn trained_model() -> RegisteredModel {
    let f = fixture();
    RegisteredModel::from_artifact(&f.trained, Some(f.trained_val.clone())).unwrap()
}

pub fn random_model() -> RegisteredModel {
    let f = fixture();
    RegisteredModel::from_artifact(&f.random, Some(f.random_val.clone())).unwrap()
}

/// Trained model without a validation set; its band is the single
/// threshold 0.5.
pub fn unvalidated_model() -> RegisteredModel {
    RegisteredModel::from_artifact(&fixture().trained, None).unwrap()
}

pub struct Harness {
    pub dir: TempDir,
    pub service: Arc<Service>,
}

impl Harness {
    pub fn config(&self) -> ServiceConfig {
        ServiceConfig::new(self.dir.path().join("artifacts"), self.dir.path().join("store"))
    }

    /// A second service over the same store, as after a restart.
    pub fn reopen(&self, models: Vec<RegisteredModel>) -> Service {
        let mut reg = ModelRegistry::default();
        models.into_iter().for_each(|m| reg.insert(m));
        Service::with_registry(self.config(), reg).unwrap()
    }
}

/// A service over a fresh store with `models` registered and none active.
pub fn harness(models: Vec<RegisteredModel>) -> Harness {
    harness_with(models, |_| {})
}

pub fn harness_with(models: Vec<RegisteredModel>, tweak: impl FnOnce(&mut ServiceConfig)) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig::new(dir.path().join("artifacts"), dir.path().join("store"));
    tweak(&mut cfg);
    let mut reg = ModelRegistry::default();
    models.into_iter().for_each(|m| reg.insert(m));
    let service = Arc::new(Service::with_registry(cfg, reg).unwrap());
    Harness { dir, service }
}

/// A service with the trained model active under its calibrated band.
pub fn active_harness() -> Harness {
    let h = harness(vec![trained_model()]);
    h.service.activate(&fixture().trained.meta.version).unwrap();
    h
}

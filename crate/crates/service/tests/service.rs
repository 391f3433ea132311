mod support;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use markguard_core::decision::{calibrate_band, decide, CostMatrix, Label, ScoredSet, ThresholdBand, VerdictLabel};
use markguard_core::manifest::Split;
use markguard_service::service::{export_from_store, replay_counters, FEEDBACK_SOURCE};
use markguard_service::store::{CONFIG_LOG, FEEDBACK_LOG, IMAGES_DIR, REQUESTS_LOG};
use markguard_service::{ConfigRecord, Counters, ServiceError};
use support::*;

fn costs(fg: f64, fc: f64, rej: f64) -> CostMatrix {
    CostMatrix::new(fg, fc, rej).unwrap()
}

fn lines(path: &std::path::Path) -> usize {
    std::fs::read_to_string(path).map_or(0, |t| t.lines().count())
}

fn rejection_rate(set: &ScoredSet, band: &ThresholdBand) -> f64 {
    let r = set.items.iter().filter(|i| decide(i.score, band).label == VerdictLabel::Reject).count();
    r as f64 / set.len() as f64
}

// ---- metrics ----

#[test]
fn fresh_service_reports_zero_counts_and_no_agreement() {
    let h = harness(vec![]);
    let m = h.service.metrics();
    assert_eq!(m.counters, Counters::default());
    assert_eq!(m.rejection_rate, None);
    assert_eq!(m.agreement, None);
    assert_eq!(m.active_model_version, None);
    assert_eq!(m.config_version, 0);
    let json = serde_json::to_value(&m).unwrap();
    assert!(json["agreement"].is_null());
    assert_eq!(json["requests"], 0);
}

#[test]
fn agreement_over_scripted_feedback_is_nine_tenths() {
    let h = harness(vec![unvalidated_model()]);
    h.service.activate(&fixture().trained.meta.version).unwrap();
    let img = genuine_images().next().unwrap();
    let mut ids = Vec::new();
    for _ in 0..10 {
        let r = h.service.authenticate(img, None).unwrap();
        assert_ne!(r.result.verdict.label, VerdictLabel::Reject);
        ids.push((r.request_id, r.result.verdict.label.asserted().unwrap()));
    }
    for (k, (id, asserted)) in ids.iter().enumerate() {
        let label = if k == 0 { flip(*asserted) } else { *asserted };
        h.service.record_feedback(id, label.as_str(), "expert").unwrap();
    }
    let m = h.service.metrics();
    assert_eq!(m.counters.compared, 10);
    assert_eq!(m.counters.agreeing, 9);
    assert_eq!(m.agreement, Some(0.9));
}

fn flip(l: Label) -> Label {
    match l {
        Label::Genuine => Label::Counterfeit,
        Label::Counterfeit => Label::Genuine,
    }
}

fn monotone(a: &Counters, b: &Counters) -> bool {
    a.requests <= b.requests
        && a.genuine <= b.genuine
        && a.counterfeit <= b.counterfeit
        && a.rejected <= b.rejected
        && a.rejected_ambiguous <= b.rejected_ambiguous
        && a.rejected_no_mark <= b.rejected_no_mark
        && a.rejected_degenerate_crop <= b.rejected_degenerate_crop
        && a.feedback_submissions <= b.feedback_submissions
        && a.labeled_requests <= b.labeled_requests
}

#[test]
fn counters_never_decrease() {
    let h = active_harness();
    let blank = markguard_core::raster::AuthImage::new(
        image::RgbImage::from_pixel(128, 128, image::Rgb([90, 90, 90])),
        None,
    )
    .unwrap()
    .encode_png();
    let mut prev = h.service.metrics().counters;
    let mut last_id = String::new();
    for (k, (bytes, label)) in fixture().images.iter().enumerate() {
        let id = h.service.authenticate(bytes, None).unwrap().request_id;
        match k % 3 {
            0 => {
                h.service.record_feedback(&id, label.as_str(), "a").unwrap();
            }
            1 if !last_id.is_empty() => {
                h.service.record_feedback(&last_id, flip(*label).as_str(), "b").unwrap();
            }
            _ => {
                h.service.authenticate(&blank, None).unwrap();
            }
        }
        last_id = id;
        let _ = h.service.recalibrate(costs(1.0 + k as f64, 1.0, 0.3));
        let now = h.service.metrics().counters;
        assert!(monotone(&prev, &now), "{prev:?} -> {now:?}");
        prev = now;
    }
    assert!(prev.rejected_no_mark > 0);
}

// ---- authenticate ----

#[test]
fn authenticate_without_active_model_is_unavailable() {
    let h = harness(vec![trained_model()]);
    let img = genuine_images().next().unwrap();
    let e = h.service.authenticate(img, None).unwrap_err();
    assert!(matches!(e, ServiceError::NoActiveModel));
    assert_eq!(e.status(), 503);
    assert_eq!(lines(&h.dir.path().join("store").join(REQUESTS_LOG)), 0);
}

#[test]
fn genuine_capture_is_authenticated_end_to_end() {
    let h = active_harness();
    let snap = h.service.snapshot();
    let img = genuine_images().next().unwrap();
    let r = h.service.authenticate(img, None).unwrap();
    assert_eq!(r.result.verdict.label, VerdictLabel::Genuine);
    let score = r.result.score.as_ref().unwrap().value;
    assert!(score > snap.band.upper);
    assert!(r.result.detection.is_some());
    assert_eq!(r.model_version, fixture().trained.meta.version);
    assert_eq!(r.thresholds_version, snap.band.version);
    assert_eq!(r.config_version, snap.config_version);
    let stored = h.dir.path().join("store").join(&r.image_path);
    assert_eq!(std::fs::read(stored).unwrap(), img);
}

#[test]
fn malformed_and_tiny_payloads_are_client_errors() {
    let h = active_harness();
    let e = h.service.authenticate(b"definitely not an image", None).unwrap_err();
    assert_eq!((e.status(), e.code()), (400, "malformed_image"));
    let tiny = markguard_core::raster::AuthImage::new(image::RgbImage::new(64, 64), None)
        .unwrap()
        .encode_png();
    let mut cropped = image::RgbImage::new(20, 20);
    cropped.put_pixel(0, 0, image::Rgb([1, 2, 3]));
    let mut small = Vec::new();
    image::DynamicImage::ImageRgb8(cropped)
        .write_to(&mut std::io::Cursor::new(&mut small), image::ImageFormat::Png)
        .unwrap();
    let e = h.service.authenticate(&small, None).unwrap_err();
    assert_eq!((e.status(), e.code()), (400, "image_too_small"));
    assert!(h.service.authenticate(&tiny, None).is_ok());
    assert_eq!(h.service.metrics().counters.requests, 1);
}

#[test]
fn oversized_payload_is_rejected_before_decoding() {
    let h = harness_with(vec![trained_model()], |c| c.payload_limit = 1000);
    let e = h.service.authenticate(&vec![0u8; 1001], None).unwrap_err();
    assert_eq!((e.status(), e.code()), (413, "payload_too_large"));
}

#[test]
fn identical_submissions_score_identically_and_share_storage() {
    let h = active_harness();
    let img = genuine_images().nth(1).unwrap();
    let a = h.service.authenticate(img, None).unwrap();
    let b = h.service.authenticate(img, None).unwrap();
    assert_ne!(a.request_id, b.request_id);
    assert_eq!(a.result, b.result);
    assert_eq!(a.image_path, b.image_path);
    let stored = std::fs::read_dir(h.dir.path().join("store").join(IMAGES_DIR)).unwrap().count();
    assert_eq!(stored, 1);
    assert_eq!(lines(&h.dir.path().join("store").join(REQUESTS_LOG)), 2);
}

// ---- feedback and export ----

#[test]
fn feedback_contract() {
    let h = active_harness();
    let id = h.service.authenticate(genuine_images().next().unwrap(), None).unwrap().request_id;
    let before = chrono::Utc::now();
    let f = h.service.record_feedback(&id, "genuine", "inspector-7").unwrap();
    assert_eq!(f.request_id, id);
    assert_eq!(f.expert_label, Label::Genuine);
    assert_eq!(f.submitter, "inspector-7");
    assert!(f.submitted_at >= before);

    let e = h.service.record_feedback("no-such-request", "genuine", "x").unwrap_err();
    assert_eq!((e.status(), e.code()), (404, "unknown_request"));
    let e = h.service.record_feedback(&id, "fake", "x").unwrap_err();
    assert_eq!((e.status(), e.code()), (409, "malformed_label"));
    assert_eq!(lines(&h.dir.path().join("store").join(FEEDBACK_LOG)), 1);
}

#[test]
fn export_requires_feedback() {
    let h = active_harness();
    h.service.authenticate(genuine_images().next().unwrap(), None).unwrap();
    let e = h.service.export_manifest().unwrap_err();
    assert_eq!((e.status(), e.code()), (404, "no_feedback"));
}

#[test]
fn export_lists_labeled_images_and_is_idempotent() {
    let h = active_harness();
    let mut expected = Vec::new();
    for (bytes, truth) in fixture().images.iter().take(3) {
        let r = h.service.authenticate(bytes, None).unwrap();
        h.service.record_feedback(&r.request_id, truth.as_str(), "e").unwrap();
        expected.push((h.dir.path().join("store").join(&r.image_path), *truth));
    }
    let m = h.service.export_manifest().unwrap();
    assert_eq!(m.entries.len(), 3);
    for (e, (path, truth)) in m.entries.iter().zip(&expected) {
        assert_eq!(e.label, *truth);
        assert_eq!(e.split, Split::Train);
        assert_eq!(e.source, FEEDBACK_SOURCE);
        assert_eq!(std::fs::canonicalize(m.resolve(e)).unwrap(), std::fs::canonicalize(path).unwrap());
    }
    m.validate().unwrap();
    assert_eq!(h.service.export_manifest().unwrap(), m);
    assert_eq!(h.service.export_manifest().unwrap().to_csv(), m.to_csv());
    assert_eq!(export_from_store(&h.dir.path().join("store")).unwrap(), m);
}

#[test]
fn later_feedback_supersedes_in_export_but_both_are_logged() {
    let h = active_harness();
    let id = h.service.authenticate(genuine_images().next().unwrap(), None).unwrap().request_id;
    h.service.record_feedback(&id, "counterfeit", "first").unwrap();
    h.service.record_feedback(&id, "genuine", "second").unwrap();
    let m = h.service.export_manifest().unwrap();
    assert_eq!(m.entries.len(), 1);
    assert_eq!(m.entries[0].label, Label::Genuine);
    assert_eq!(lines(&h.dir.path().join("store").join(FEEDBACK_LOG)), 2);
    let c = h.service.metrics().counters;
    assert_eq!((c.feedback_submissions, c.labeled_requests), (2, 1));
}

#[test]
fn requests_sharing_an_image_export_once_with_the_latest_label() {
    let h = active_harness();
    let img = genuine_images().next().unwrap();
    let a = h.service.authenticate(img, None).unwrap().request_id;
    let b = h.service.authenticate(img, None).unwrap().request_id;
    h.service.record_feedback(&b, "counterfeit", "x").unwrap();
    h.service.record_feedback(&a, "genuine", "y").unwrap();
    let m = h.service.export_manifest().unwrap();
    assert_eq!(m.entries.len(), 1);
    assert_eq!(m.entries[0].label, Label::Genuine);
}

// ---- replay ----

#[test]
fn replaying_the_logs_reproduces_metrics_and_configuration() {
    let h = active_harness();
    for (k, (bytes, truth)) in fixture().images.iter().enumerate() {
        let id = h.service.authenticate(bytes, None).unwrap().request_id;
        if k % 2 == 0 {
            h.service.record_feedback(&id, truth.as_str(), "e").unwrap();
        }
    }
    h.service.recalibrate(costs(5.0, 1.0, 0.2)).unwrap();
    let live = h.service.metrics();
    let store = h.dir.path().join("store");
    assert_eq!(replay_counters(&store).unwrap(), live.counters);

    let restarted = h.reopen(vec![trained_model()]);
    assert_eq!(restarted.metrics(), live);
    assert_eq!(restarted.snapshot().info(), h.service.snapshot().info());
    assert_eq!(restarted.export_manifest().unwrap(), h.service.export_manifest().unwrap());
}

// ---- thresholds and models ----

#[test]
fn recalibrate_installs_the_direct_calibration() {
    let h = active_harness();
    let c = costs(1.0, 1.0, 0.25);
    let band = h.service.recalibrate(c).unwrap();
    let direct = calibrate_band(&fixture().trained_val, &c).unwrap().band;
    assert_eq!(band, direct);
    let snap = h.service.snapshot();
    assert_eq!(snap.band, direct);
    assert_eq!(snap.costs, c);
    let r = h.service.authenticate(genuine_images().next().unwrap(), None).unwrap();
    assert_eq!(r.thresholds_version, direct.version);
}

#[test]
fn costlier_false_genuine_never_lowers_rejection() {
    let h = active_harness();
    let val = &fixture().trained_val;
    for base in [costs(1.0, 1.0, 0.5), costs(1.0, 1.0, 0.1), costs(0.5, 2.0, 0.3)] {
        let old = h.service.recalibrate(base).unwrap();
        let raised = CostMatrix { cost_false_genuine: base.cost_false_genuine * 10.0, ..base };
        let new = h.service.recalibrate(raised).unwrap();
        assert!(rejection_rate(val, &new) >= rejection_rate(val, &old), "{base:?}");
    }
}

#[test]
fn recalibrate_errors() {
    let h = active_harness();
    let bad = CostMatrix { cost_false_genuine: 1.0, cost_false_counterfeit: 1.0, cost_reject: 0.0 };
    let e = h.service.recalibrate(bad).unwrap_err();
    assert_eq!((e.status(), e.code()), (422, "invalid_costs"));

    let h = harness(vec![unvalidated_model()]);
    let e = h.service.recalibrate(costs(1.0, 1.0, 0.5)).unwrap_err();
    assert_eq!(e.status(), 503);
    h.service.activate(&fixture().trained.meta.version).unwrap();
    let e = h.service.recalibrate(costs(1.0, 1.0, 0.5)).unwrap_err();
    assert_eq!((e.status(), e.code()), (503, "no_validation_set"));
    assert!(h.service.snapshot().band.rejects_nothing());
}

#[test]
fn activation_contract() {
    let h = harness(vec![trained_model(), random_model()]);
    let e = h.service.activate("missing").unwrap_err();
    assert_eq!((e.status(), e.code()), (404, "unknown_model"));

    let f = fixture();
    let info = h.service.activate(&f.random.meta.version).unwrap();
    assert_eq!(info.config_version, 1);
    assert_eq!(info.model_version.as_deref(), Some(f.random.meta.version.as_str()));
    assert_eq!(info.band, calibrate_band(&f.random_val, &info.costs).unwrap().band);
    let listing = h.service.models();
    assert_eq!(listing.len(), 2);
    assert_eq!(listing.iter().filter(|m| m.active).count(), 1);
    assert!(listing.iter().all(|m| m.has_validation_set));

    let info = h.service.activate(&f.trained.meta.version).unwrap();
    assert_eq!(info.config_version, 2);
    let log: Vec<ConfigRecord> = std::fs::read_to_string(h.dir.path().join("store").join(CONFIG_LOG))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(log.len(), 2);
    assert!(log.iter().all(|c| c.cause == "activate"));
}

#[test]
fn artifacts_on_disk_are_discovered() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture();
    let art = dir.path().join("artifacts");
    f.trained.save(&art.join("a")).unwrap();
    std::fs::write(
        art.join("a").join(markguard_service::registry::VALIDATION_FILE),
        serde_json::to_string(&f.trained_val).unwrap(),
    )
    .unwrap();
    let mut cfg = markguard_service::ServiceConfig::new(&art, dir.path().join("store"));
    cfg.initial_model = Some(f.trained.meta.version.clone());
    let svc = markguard_service::Service::open(cfg.clone()).unwrap();
    assert_eq!(svc.snapshot().model_version(), Some(f.trained.meta.version.as_str()));
    assert_eq!(svc.models().len(), 1);

    f.random.save(&art.join("b")).unwrap();
    let info = svc.activate(&f.random.meta.version).unwrap();
    assert!(info.band.rejects_nothing());
    drop(svc);
    // The restart restores the last activation instead of the startup model.
    cfg.initial_model = None;
    let svc = markguard_service::Service::open(cfg).unwrap();
    assert_eq!(svc.snapshot().model_version(), Some(f.random.meta.version.as_str()));
    assert_eq!(svc.snapshot().config_version, 2);
}

#[test]
fn tradeoff_reads_the_active_validation_set() {
    let h = active_harness();
    let curve = h.service.tradeoff(&[0.0, 0.1]).unwrap();
    let direct = markguard_core::decision::tradeoff_curve(&fixture().trained_val, &[0.0, 0.1]).unwrap();
    assert_eq!(curve, direct);
    assert_eq!(h.service.tradeoff(&[0.5, 0.1]).unwrap_err().status(), 400);
}

// ---- concurrency ----

/// 1,000 authenticates race 20 configuration swaps. Every record's version
/// pair must be one that was installed together.
#[test]
fn concurrent_swaps_never_mix_versions() {
    const REQUESTS: usize = 1000;
    const SWAPS: usize = 20;
    const WORKERS: usize = 8;
    let f = fixture();
    let h = harness(vec![trained_model(), random_model()]);
    h.service.activate(&f.trained.meta.version).unwrap();
    let images: Vec<&[u8]> = f.images.iter().map(|(b, _)| b.as_slice()).collect();
    let done = Arc::new(AtomicUsize::new(0));
    let next = Arc::new(AtomicUsize::new(0));

    let records = std::thread::scope(|s| {
        let svc = &h.service;
        let swapper = {
            let done = done.clone();
            s.spawn(move || {
                let versions = [&f.random.meta.version, &f.trained.meta.version];
                for k in 0..SWAPS {
                    while done.load(Ordering::SeqCst) < (k + 1) * REQUESTS / (SWAPS + 1) {
                        std::thread::yield_now();
                    }
                    if k % 3 == 2 {
                        svc.recalibrate(costs(1.0 + k as f64, 1.0, 0.1 + 0.02 * k as f64)).unwrap();
                    } else {
                        svc.activate(versions[k % 2]).unwrap();
                    }
                }
            })
        };
        let workers: Vec<_> = (0..WORKERS)
            .map(|_| {
                let (done, next, images) = (done.clone(), next.clone(), &images);
                s.spawn(move || {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= REQUESTS {
                            break out;
                        }
                        out.push(svc.authenticate(images[i % images.len()], None).unwrap());
                        done.fetch_add(1, Ordering::SeqCst);
                    }
                })
            })
            .collect();
        let recs: Vec<_> = workers.into_iter().flat_map(|w| w.join().unwrap()).collect();
        swapper.join().unwrap();
        recs
    });

    assert_eq!(records.len(), REQUESTS);
    let log: Vec<ConfigRecord> = std::fs::read_to_string(h.dir.path().join("store").join(CONFIG_LOG))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(log.len(), SWAPS + 1);
    let installed: HashMap<u64, (&str, &str)> = log
        .iter()
        .map(|c| (c.config_version, (c.model_version.as_str(), c.band.version.as_str())))
        .collect();
    let pairs: HashSet<(&str, &str)> = installed.values().copied().collect();
    let mut mixed = 0;
    for r in &records {
        let pair = (r.model_version.as_str(), r.thresholds_version.as_str());
        if installed.get(&r.config_version) != Some(&pair) || !pairs.contains(&pair) {
            mixed += 1;
        }
    }
    assert_eq!(mixed, 0);
    let seen: HashSet<u64> = records.iter().map(|r| r.config_version).collect();
    assert!(seen.len() > 10, "swaps did not interleave: {seen:?}");

    let ids: HashSet<&str> = records.iter().map(|r| r.request_id.as_str()).collect();
    assert_eq!(ids.len(), REQUESTS);
    assert_eq!(lines(&h.dir.path().join("store").join(REQUESTS_LOG)), REQUESTS);
    assert_eq!(h.service.metrics().counters.requests, REQUESTS as u64);
    assert_eq!(replay_counters(&h.dir.path().join("store")).unwrap(), h.service.metrics().counters);
}

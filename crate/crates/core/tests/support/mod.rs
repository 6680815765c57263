//! Test-only oracles and fixtures. Nothing here calls into the matching or
//! sweep code it is used to check.
#![allow(dead_code, clippy::type_complexity, clippy::too_many_arguments)]

use ambiprune_core::eval::{iou, CurvePoint, MrFppiCurve};
use ambiprune_core::{
    AnnotatorAnswers, BoundingBox, Dataset, Detection, ImageRecord, Instance, TagLevel,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Closed form of the ambiguity measure: gamma * 2|yes/d - 1/2| collapses to
/// |yes - no| / n, so alpha = 1 - |yes - no| / n (and 1 when only "unsure").
pub fn ambiguity_closed_form(a: &AnnotatorAnswers) -> f64 {
    let n = (a.yes + a.no + a.unsure) as f64;
    1.0 - (a.yes as f64 - a.no as f64).abs() / n
}

pub fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1)
}

pub fn ped(id: &str, b: BoundingBox) -> Instance {
    Instance::new(id, b, "pedestrian")
}

/// Candidate edges `(detection, gt)` with IoU at or above the threshold,
/// restricted to non-ignore ground truth.
pub fn candidate_edges(gt: &[Instance], dets: &[Detection], thr: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (d, det) in dets.iter().enumerate() {
        for (g, inst) in gt.iter().enumerate() {
            if !inst.ignore && iou(&det.bbox, &inst.bbox) >= thr {
                edges.push((d, g));
            }
        }
    }
    edges
}

/// Maximum number of true positives over every injective assignment of
/// detections to non-ignore ground truth with IoU >= thr.
pub fn oracle_max_tp(gt: &[Instance], dets: &[Detection], thr: f64) -> usize {
    fn go(d: usize, dets: &[Detection], gt: &[Instance], used: &mut Vec<bool>, thr: f64) -> usize {
        if d == dets.len() {
            return 0;
        }
        let mut best = go(d + 1, dets, gt, used, thr);
        for g in 0..gt.len() {
            if !used[g] && !gt[g].ignore && iou(&dets[d].bbox, &gt[g].bbox) >= thr {
                used[g] = true;
                best = best.max(1 + go(d + 1, dets, gt, used, thr));
                used[g] = false;
            }
        }
        best
    }
    go(0, dets, gt, &mut vec![false; gt.len()], thr)
}

/// Enumerates all injective assignments and returns, among those of maximum
/// size, the one that favours higher-confidence detections lexicographically.
/// Result: per detection, the matched gt index.
pub fn oracle_assignment(gt: &[Instance], dets: &[Detection], thr: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut best: Option<(usize, Vec<bool>, Vec<Option<usize>>)> = None;
    let mut current = vec![None; dets.len()];
    fn go(
        k: usize,
        order: &[usize],
        dets: &[Detection],
        gt: &[Instance],
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        best: &mut Option<(usize, Vec<bool>, Vec<Option<usize>>)>,
        thr: f64,
    ) {
        if k == order.len() {
            let size = current.iter().flatten().count();
            let key: Vec<bool> = order.iter().map(|&d| current[d].is_some()).collect();
            let better = match best {
                None => true,
                Some((s, bk, _)) => size > *s || (size == *s && key > *bk),
            };
            if better {
                *best = Some((size, key, current.clone()));
            }
            return;
        }
        let d = order[k];
        go(k + 1, order, dets, gt, used, current, best, thr);
        for g in 0..gt.len() {
            if !used[g] && !gt[g].ignore && iou(&dets[d].bbox, &gt[g].bbox) >= thr {
                used[g] = true;
                current[d] = Some(g);
                go(k + 1, order, dets, gt, used, current, best, thr);
                current[d] = None;
                used[g] = false;
            }
        }
    }
    go(0, &order, dets, gt, &mut vec![false; gt.len()], &mut current, &mut best, thr);
    best.unwrap().2
}

/// Every candidate edge touches a detection or a gt of candidate degree one,
/// i.e. each connected component of the candidate graph is a star.
pub fn non_conflicting(gt: &[Instance], dets: &[Detection], thr: f64) -> bool {
    let edges = candidate_edges(gt, dets, thr);
    let deg_d = |d: usize| edges.iter().filter(|e| e.0 == d).count();
    let deg_g = |g: usize| edges.iter().filter(|e| e.1 == g).count();
    edges.iter().all(|&(d, g)| deg_d(d) == 1 || deg_g(g) == 1)
}

/// Miss rate/FPPI curve by definition: for every distinct confidence,
/// re-run the matcher on detections at or above it.
pub fn naive_curve<F>(dataset: &Dataset, dets: &[Detection], mut run: F) -> MrFppiCurve
where
    F: FnMut(&[Detection]) -> (usize, usize, usize),
{
    let mut confs: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    confs.sort_by(|a, b| b.total_cmp(a));
    confs.dedup();
    let mut points: Vec<CurvePoint> = Vec::new();
    for c in confs {
        let kept: Vec<Detection> = dets.iter().filter(|d| d.confidence >= c).cloned().collect();
        let (_tp, fp, fn_count) = run(&kept);
        let gt = dataset.instances().filter(|i| !i.ignore).count();
        let p = CurvePoint {
            fppi: fp as f64 / dataset.images.len() as f64,
            miss_rate: fn_count as f64 / gt as f64,
        };
        match points.last_mut() {
            Some(last) if last.fppi == p.fppi => last.miss_rate = last.miss_rate.min(p.miss_rate),
            _ => points.push(p),
        }
    }
    if points.is_empty() {
        points.push(CurvePoint { fppi: 0.0, miss_rate: 1.0 });
    }
    MrFppiCurve { points }
}

fn random_level(rng: &mut StdRng) -> TagLevel {
    TagLevel::ALL[rng.gen_range(0..4)]
}

/// One random image with up to `max_gt` ground truth boxes and up to
/// `max_det` detections, most of them jittered copies of ground truth.
pub fn random_image(
    rng: &mut StdRng,
    image_id: &str,
    max_gt: usize,
    max_det: usize,
    ignore_prob: f64,
) -> (ImageRecord, Vec<Detection>) {
    let n_gt = rng.gen_range(0..=max_gt);
    let mut instances = Vec::with_capacity(n_gt);
    for g in 0..n_gt {
        let x0 = rng.gen_range(0.0..150.0);
        let y0 = rng.gen_range(0.0..100.0);
        let w = rng.gen_range(10.0..40.0);
        let h = rng.gen_range(15.0..90.0);
        let mut inst = ped(&format!("{image_id}:{g}"), bb(x0, y0, x0 + w, y0 + h))
            .with_tags(random_level(rng), random_level(rng))
            .with_ambiguity(rng.gen_range(0.0..=1.0));
        inst.ignore = rng.gen_bool(ignore_prob);
        instances.push(inst);
    }
    let n_det = rng.gen_range(0..=max_det);
    let mut dets = Vec::with_capacity(n_det);
    for _ in 0..n_det {
        let b = if !instances.is_empty() && rng.gen_bool(0.75) {
            let base = instances[rng.gen_range(0..instances.len())].bbox;
            let jx = rng.gen_range(-6.0..6.0);
            let jy = rng.gen_range(-8.0..8.0);
            let s = rng.gen_range(0.8..1.2);
            bb(
                base.x0 + jx,
                base.y0 + jy,
                base.x0 + jx + base.width() * s,
                base.y0 + jy + base.height() * s,
            )
        } else {
            let x0 = rng.gen_range(0.0..150.0);
            let y0 = rng.gen_range(0.0..100.0);
            bb(x0, y0, x0 + rng.gen_range(10.0..40.0), y0 + rng.gen_range(15.0..90.0))
        };
        dets.push(Detection::new(image_id, b, rng.gen_range(0.0..=1.0)));
    }
    (ImageRecord::new(image_id, 200, 200).with_instances(instances), dets)
}

pub fn random_corpus(seed: u64, images: usize, max_gt: usize, max_det: usize) -> (Dataset, Vec<Detection>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(images);
    let mut dets = Vec::new();
    for i in 0..images {
        let (img, d) = random_image(&mut rng, &format!("img{i:04}"), max_gt, max_det, 0.1);
        records.push(img);
        dets.extend(d);
    }
    (Dataset::new(format!("random-{seed}"), records), dets)
}

/// Ten images with one 90 px pedestrian each; five found at confidence 0.9,
/// one false positive at 0.8.
pub fn ten_image_fixture() -> (Dataset, Vec<Detection>) {
    let images = (0..10)
        .map(|i| {
            ImageRecord::new(format!("img{i}"), 200, 200)
                .with_instances(vec![ped(&format!("g{i}"), bb(10.0, 10.0, 40.0, 100.0))
                    .with_answers(AnnotatorAnswers::new(5, 0, 0))
                    .with_ambiguity(0.0)])
        })
        .collect();
    let mut dets: Vec<Detection> = (0..5)
        .map(|i| Detection::new(format!("img{i}"), bb(10.0, 10.0, 40.0, 100.0), 0.9))
        .collect();
    dets.push(Detection::new("img9", bb(150.0, 100.0, 190.0, 190.0), 0.8));
    (Dataset::new("ten-image", images), dets)
}

/// Table 1 boundary fixture: 12 instances and their expected membership in
/// (reasonable, small, occluded, all), derived by hand from the row criteria.
pub fn subset_boundary_fixture() -> Vec<(Instance, [bool; 4])> {
    use TagLevel::*;
    let mk = |k: usize, h: f64, occ: TagLevel, trunc: TagLevel| {
        ped(&format!("b{k}"), bb(0.0, 0.0, 20.0, h)).with_tags(occ, trunc)
    };
    //                      height occ   trunc   reas   small  occl   all
    let rows: [(f64, TagLevel, TagLevel, [bool; 4]); 12] = [
        (20.0, None, None, [false, false, false, false]),
        (30.0, None, None, [false, true, false, true]),
        (35.0, None, None, [false, true, false, true]),
        (40.0, None, None, [false, true, false, true]),
        (41.0, None, None, [true, true, false, true]),
        (50.0, None, None, [true, true, false, true]),
        (60.0, None, None, [true, true, false, true]),
        (61.0, None, None, [true, false, false, true]),
        (50.0, Gt40, None, [false, false, true, true]),
        (50.0, Gt80, None, [false, false, false, false]),
        (50.0, Gt10, Gt40, [false, false, false, true]),
        (41.0, Gt40, Gt80, [false, false, false, false]),
    ];
    rows.iter()
        .enumerate()
        .map(|(k, &(h, o, t, m))| (mk(k, h, o, t), m))
        .collect()
}

/// Scored dataset in which occlusion level and ambiguity are positively
/// associated: none ~ [0, 0.45), gt10 ~ [0.2, 0.6), gt40 ~ [0.4, 0.75),
/// gt80 ~ [0.75, 0.85) with most gt80 mass in [0.75, 0.80).
pub fn occlusion_association_fixture(seed: u64) -> Dataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut instances = Vec::new();
    let mut push = |level: TagLevel, alpha: f64, k: usize| {
        instances.push(
            ped(&format!("o{k}"), bb(0.0, 0.0, 20.0, 60.0))
                .with_tags(level, TagLevel::None)
                .with_ambiguity(alpha),
        );
    };
    let mut k = 0;
    for _ in 0..400 {
        push(TagLevel::None, rng.gen_range(0.0..0.45), k);
        k += 1;
    }
    for _ in 0..200 {
        push(TagLevel::Gt10, rng.gen_range(0.2..0.6), k);
        k += 1;
    }
    for _ in 0..150 {
        push(TagLevel::Gt40, rng.gen_range(0.4..0.75), k);
        k += 1;
    }
    for i in 0..100 {
        let alpha = if i % 5 == 0 {
            rng.gen_range(0.80..0.85)
        } else {
            rng.gen_range(0.75..0.80)
        };
        push(TagLevel::Gt80, alpha, k);
        k += 1;
    }
    // a little unrelated mass above 0.8 so the gt80 share there stays lower
    for _ in 0..40 {
        push(TagLevel::Gt10, rng.gen_range(0.80..0.85), k);
        k += 1;
    }
    let images = instances
        .chunks(10)
        .enumerate()
        .map(|(i, chunk)| ImageRecord::new(format!("img{i:03}"), 200, 200).with_instances(chunk.to_vec()))
        .collect();
    Dataset::new("occlusion-association", images)
}

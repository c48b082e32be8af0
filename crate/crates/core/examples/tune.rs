// Scratch harness for calibrating world/training/attack defaults. Not part
// of the deliverable; removed before release.

use std::time::Instant;

use trojanlab::attack::{decode_beacon, generate_trojan_set, AttackConfig};
use trojanlab::matcher::{train_matcher, TrainConfig};
use trojanlab::retrieval::{self, EvalSetup};
use trojanlab::synthworld::{
    generate_benign_set, generate_corpus, select_keywords, Flavor, Split, WorldParams,
};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("train");

    let world = WorldParams::new(64, Flavor::Alpha, 0.1);
    let n_train: usize = args
        .iter()
        .position(|a| a == "--ntrain")
        .map(|i| args[i + 1].parse().unwrap())
        .unwrap_or(200);
    let batch: usize = args
        .iter()
        .position(|a| a == "--batch")
        .map(|i| args[i + 1].parse().unwrap())
        .unwrap_or(32);
    let n_test: usize = args
        .iter()
        .position(|a| a == "--ntest")
        .map(|i| args[i + 1].parse().unwrap())
        .unwrap_or(100);
    let t0 = Instant::now();
    let corpus = generate_corpus(42, n_train, 20, n_test, &world).unwrap();
    println!("corpus({n_train}/{n_test}): {:?}", t0.elapsed());

    let epochs: usize = args
        .iter()
        .position(|a| a == "--epochs")
        .map(|i| args[i + 1].parse().unwrap())
        .unwrap_or(300);
    let lr: f64 = args
        .iter()
        .position(|a| a == "--lr")
        .map(|i| args[i + 1].parse().unwrap())
        .unwrap_or(1.0);
    let arch = args
        .iter()
        .position(|a| a == "--arch")
        .map(|i| args[i + 1].clone())
        .unwrap_or_else(|| "linear".into());

    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        arch: arch.clone(),
        batch_size: batch,
        seed: 42,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (model, log) = train_matcher(&corpus, &cfg).unwrap();
    println!(
        "train[{arch}] lr={lr} epochs={epochs}: {:?}  val_r10={:.3}  loss {:.4} -> {:.4}",
        t0.elapsed(),
        log.val_r10,
        log.losses.first().unwrap_or(&f64::NAN),
        log.losses.last().unwrap_or(&f64::NAN)
    );

    // Test-split R10 (clean-system quality), index = test images only.
    let test_images: Vec<(String, &trojanlab::Tensor, retrieval::Origin)> = corpus
        .items_in(Split::Test)
        .map(|it| {
            (
                retrieval::corpus_image_id(it.id),
                &it.image,
                retrieval::Origin::Corpus,
            )
        })
        .collect();
    let index = retrieval::build_index(&model, &test_images).unwrap();
    let mut hits = 0;
    let mut total = 0;
    for (item, caption) in corpus.captions_in(Split::Test) {
        let top = retrieval::query_topk(&index, &model, &caption.tokens, 10).unwrap();
        let want = retrieval::corpus_image_id(item.id);
        if top.iter().any(|(id, _)| *id == want) {
            hits += 1;
        }
        total += 1;
    }
    println!("test R10 (corpus only): {:.1}%", 100.0 * hits as f64 / total as f64);

    if mode == "train" {
        return;
    }

    let benign = generate_benign_set(42, 20, 64).unwrap();
    let keywords = select_keywords(&corpus, 8, 42).unwrap();
    println!(
        "keywords: {:?}",
        keywords.iter().map(|k| k.word.as_str()).collect::<Vec<_>>()
    );

    if mode == "attack" {
        // Default attack over a few keywords, report effect sizes.
        let n_kw: usize = args
            .iter()
            .position(|a| a == "--kw")
            .map(|i| args[i + 1].parse().unwrap())
            .unwrap_or(6);
        let acfg = AttackConfig {
            seed: 42,
            ..AttackConfig::default()
        };
        let t0 = Instant::now();
        let sets: Vec<_> = keywords
            .iter()
            .take(n_kw)
            .map(|kw| generate_trojan_set(&model, &corpus, &benign, &kw.word, &acfg).unwrap())
            .collect();
        println!("attacks x{n_kw}: {:?}", t0.elapsed());
        for set in &sets {
            let trace = &set.patch.loss_trace;
            let readout = decode_beacon(&set.patch.delta, 8, Some(&set.beacon)).unwrap();
            println!(
                "  {:<10} iters={:<4} attack {:.3}->{:.3} usab={:.3} mcs={:.3} conv={} acc={:.3} scan={}",
                set.keyword,
                trace.len(),
                trace.first().map(|e| e.attack).unwrap_or(f64::NAN),
                trace.last().map(|e| e.attack).unwrap_or(f64::NAN),
                trace.last().map(|e| e.usability).unwrap_or(f64::NAN),
                set.context.mcs,
                set.patch.converged,
                readout.cell_accuracy.unwrap(),
                readout.scannable,
            );
        }
        let refs: Vec<&_> = sets.iter().collect();
        let setup = EvalSetup {
            attack_model: "linear/alpha".into(),
            attack_corpus: "alpha".into(),
            eval_model: "linear/alpha".into(),
            eval_corpus: "alpha".into(),
            mode: "white-box".into(),
        };
        let report = retrieval::evaluate_attack(&model, &corpus, &benign, &refs, 10, setup).unwrap();
        for row in report.rows.iter().chain([&report.mean_row]) {
            println!(
                "  {:<10} rel {:.1}->{:.1}  novel {:.1}->{:.1}  mcs {:.3}",
                row.keyword,
                row.relevant_r10_clean,
                row.relevant_r10_tth,
                row.trojan_r10_clean,
                row.trojan_r10_tth,
                row.mcs
            );
        }
        println!("  spearman(mcs, tth) = {:?}", report.mcs_spearman);
    }

    if mode == "diag" {
        // Cosine landscape: keyword queries vs matching / non-matching /
        // benign images; and attack gradient magnitudes at the anchor.
        use trojanlab::matcher::{embed_image, embed_text};
        let kw = &keywords[0].word;
        let token = corpus.token(kw).unwrap();
        let img_embeds: Vec<_> = corpus
            .items_in(Split::Test)
            .map(|it| (it, embed_image(&model, &it.image).unwrap()))
            .collect();
        let ben_embeds: Vec<_> = benign
            .images
            .iter()
            .map(|im| embed_image(&model, im).unwrap())
            .collect();
        let mut match_cos = vec![];
        let mut non_cos = vec![];
        let mut ben_cos = vec![];
        let mut tenth = vec![];
        for (item, caption) in corpus.captions_in(Split::Test) {
            if !caption.contains(token) {
                continue;
            }
            let q = embed_text(&model, &caption.tokens).unwrap();
            let mut all: Vec<f64> = vec![];
            for (it, e) in &img_embeds {
                let c = q.cosine(e);
                all.push(c);
                if it.id == item.id {
                    match_cos.push(c);
                } else {
                    non_cos.push(c);
                }
            }
            for e in &ben_embeds {
                ben_cos.push(q.cosine(e));
            }
            all.sort_by(|a, b| b.partial_cmp(a).unwrap());
            tenth.push(all[9.min(all.len() - 1)]);
        }
        let stats = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = v.len();
            (v[n / 20], v[n / 2], v[n - 1 - n / 20])
        };
        println!("keyword {kw}: matching 5/50/95 pct: {:?}", stats(&mut match_cos));
        println!("  non-matching corpus:            {:?}", stats(&mut non_cos));
        println!("  benign:                         {:?}", stats(&mut ben_cos));
        println!("  10th-best corpus score:         {:?}", stats(&mut tenth));

        // Gradient magnitudes at the beacon anchor (lambda = 0).
        use trojanlab::attack::{
            build_keyword_context, make_beacon, patch_gradient, payload_from_hex, MaskSpec,
            PatchState, Placement,
        };
        let ctx = build_keyword_context(&model, &corpus, kw, 500, 42).unwrap();
        let mask = MaskSpec::new(64, 64, 3, 0.1, Placement::TopRight).unwrap();
        let beacon = make_beacon(&payload_from_hex("54524f4a414e").unwrap(), 8, mask.side).unwrap();
        let state = PatchState::new(beacon.rendered.clone(), mask, 0.0, 0.01, 300).unwrap();
        let grad = patch_gradient(&model, &benign, &state, &ctx.embedding).unwrap();
        let g = grad.data();
        let l2 = (g.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let mean_abs = g.iter().map(|x| x.abs()).sum::<f64>() / g.len() as f64;
        let max_abs = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
        println!(
            "grad at anchor (unit domain, lambda=0): l2={l2:.5e} mean|g|={mean_abs:.5e} max|g|={max_abs:.5e} n={}",
            g.len()
        );
    }

    if mode == "lambda" {
        let kw = &keywords[0].word;
        for lambda in [0.0, 0.1, 0.3, 1.0, 10.0] {
            let acfg = AttackConfig {
                lambda,
                seed: 42,
                ..AttackConfig::default()
            };
            let t0 = Instant::now();
            let set = generate_trojan_set(&model, &corpus, &benign, kw, &acfg).unwrap();
            let readout = decode_beacon(&set.patch.delta, 8, Some(&set.beacon)).unwrap();
            let r10 = retrieval::trojan_r10_for_set(&model, &corpus, &set, 10).unwrap();
            let trace = &set.patch.loss_trace;
            println!(
                "lambda={:<5} r10={:>6.1} acc={:.3} scan={} attack {:.3}->{:.3} usab={:.4} iters={} conv={} ({:?})",
                lambda,
                r10,
                readout.cell_accuracy.unwrap(),
                readout.scannable,
                trace.first().map(|e| e.attack).unwrap_or(f64::NAN),
                trace.last().map(|e| e.attack).unwrap_or(f64::NAN),
                trace.last().map(|e| e.usability).unwrap_or(f64::NAN),
                trace.len(),
                set.patch.converged,
                t0.elapsed(),
            );
        }
    }
}

use jointspace::composition::CompositionKind;
use jointspace::corpus::{NoiseSample, ParallelCorpus};
use jointspace::embeddings::ModelBundle;
use jointspace::objective::Objective;
use jointspace::synth::{self, Generator, Lexicon, SynthConfig};
use jointspace::training::{self, TrainConfig, Trainer};

fn toy(sentences: usize, seed: u64) -> (ModelBundle, ParallelCorpus) {
    let task = synth::twin_task("en", "de", sentences, 1, seed);
    let va = synth::vocab_of(&task.parallel.source);
    let vb = synth::vocab_of(&task.parallel.target);
    let corpus = task.parallel.to_corpus(&va, &vb).unwrap();
    let bundle = ModelBundle::initialise(8, CompositionKind::Add, [("en", va), ("de", vb)], seed);
    (bundle, corpus)
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        dim: 8,
        margin: 8.0,
        noise: 5,
        batch: 50,
        epochs: 50,
        ..TrainConfig::default()
    }
}

/// Loss against fixed noise (each pair's successor) for a before/after check.
fn frozen_loss(bundle: &ModelBundle, corpus: &ParallelCorpus, margin: f64) -> f64 {
    let obj = Objective {
        bundle,
        kind: CompositionKind::Add,
        margin,
        source_lang: "en",
        target_lang: "de",
    };
    let n = corpus.len();
    (0..n)
        .map(|i| {
            let noise: Vec<NoiseSample<'_>> = (1..=3)
                .map(|s| NoiseSample {
                    sentence: &corpus.pairs[(i + s) % n].target,
                    source_index: (i + s) % n,
                })
                .collect();
            obj.pair_loss_and_grads(&corpus.pairs[i], &noise).unwrap().0.hinge_total
        })
        .sum()
}

#[test]
fn toy_corpus_loss_falls_below_a_tenth() {
    let (mut bundle, corpus) = toy(50, 1);
    let report = training::train_single(&corpus, &mut bundle, &toy_config()).unwrap();
    assert_eq!(report.epochs.len(), 50);
    let first = report.epochs[0].hinge_total;
    let last = report.epochs[49].hinge_total;
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn frozen_evaluation_loss_decreases() {
    let (mut bundle, corpus) = toy(50, 2);
    let before = frozen_loss(&bundle, &corpus, 8.0);
    training::train_single(&corpus, &mut bundle, &toy_config()).unwrap();
    let after = frozen_loss(&bundle, &corpus, 8.0);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn single_threaded_training_is_bitwise_deterministic() {
    let (start, corpus) = toy(40, 3);
    let config = TrainConfig {
        epochs: 5,
        batch: 7,
        ..toy_config()
    };
    let (mut a, mut b) = (start.clone(), start);
    let ra = training::train_single(&corpus, &mut a, &config).unwrap();
    let rb = training::train_single(&corpus, &mut b, &config).unwrap();
    assert_eq!(ra.loss_tsv(), rb.loss_tsv());
    for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
        let bx: Vec<u64> = x.table.as_slice().iter().map(|v| v.to_bits()).collect();
        let by: Vec<u64> = y.table.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bx, by);
    }
}

#[test]
fn different_seeds_differ() {
    let (start, corpus) = toy(40, 3);
    let config = TrainConfig { epochs: 2, ..toy_config() };
    let (mut a, mut b) = (start.clone(), start);
    training::train_single(&corpus, &mut a, &config).unwrap();
    training::train_single(&corpus, &mut b, &TrainConfig { seed: 2, ..config }).unwrap();
    assert_ne!(a.table("en").unwrap(), b.table("en").unwrap());
}

#[test]
fn accumulators_never_decrease_across_checkpoints() {
    let (mut bundle, corpus) = toy(30, 4);
    let config = TrainConfig { epochs: 6, batch: 5, ..toy_config() };
    let mut trainer = Trainer::new(config, &bundle).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut previous = trainer.state().clone();
    for _ in 0..3 {
        trainer.run_epoch(std::slice::from_ref(&corpus), &mut bundle).unwrap();
        trainer.run_epoch(std::slice::from_ref(&corpus), &mut bundle).unwrap();
        trainer.checkpoint(&bundle, dir.path()).unwrap();
        let reloaded = training::resume(dir.path()).unwrap();
        assert!(reloaded.trainer.state().dominates(&previous));
        assert_eq!(reloaded.trainer.epoch(), trainer.epoch());
        previous = reloaded.trainer.state().clone();
    }
}

#[test]
fn document_signal_trains_on_aligned_documents() {
    let config = SynthConfig::default();
    let mut gen = Generator::new(config, 5);
    let latent = gen.documents(40);
    let en = Lexicon::new("en", &config, 5).render_docs(&latent, "d");
    let de = Lexicon::new("de", &config, 5).render_docs(&latent, "d");
    let mut ven = jointspace::Vocabulary::new();
    ven.extend(en.iter().flat_map(|d| d.sentences.iter()));
    let mut vde = jointspace::Vocabulary::new();
    vde.extend(de.iter().flat_map(|d| d.sentences.iter()));
    let src: Vec<_> = en.iter().filter_map(|d| d.to_ids(&ven)).collect();
    let tgt: Vec<_> = de.iter().filter_map(|d| d.to_ids(&vde)).collect();
    let corpus = ParallelCorpus::from_documents(&src, &tgt).unwrap();
    assert_eq!(corpus.documents.as_ref().unwrap().len(), 40);

    for kind in [CompositionKind::Add, CompositionKind::Bi] {
        let mut bundle = ModelBundle::initialise(8, kind, [("en", ven.clone()), ("de", vde.clone())], 5);
        let config = TrainConfig {
            kind,
            doc_signal: true,
            batch: 5,
            epochs: 20,
            ..toy_config()
        };
        let report = training::train_single(&corpus, &mut bundle, &config).unwrap();
        // one unit per document
        assert_eq!(report.epochs[0].updates, 8);
        let first = report.epochs[0].hinge_total;
        let last = report.epochs.last().unwrap().hinge_total;
        assert!(last < 0.5 * first, "{kind}: {first} -> {last}");
    }
}

#[test]
fn parallel_gradients_still_learn() {
    let (mut bundle, corpus) = toy(50, 6);
    let config = TrainConfig { threads: 3, batch: 10, ..toy_config() };
    let report = training::train_single(&corpus, &mut bundle, &config).unwrap();
    assert!(report.epochs.last().unwrap().hinge_total < 0.1 * report.epochs[0].hinge_total);
}

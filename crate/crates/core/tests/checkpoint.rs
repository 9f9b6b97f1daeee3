use fieldrank::checkpoint::{load, save};
use fieldrank::data::{build_query_groups, temporal_split, Corpus};
use fieldrank::eval::evaluate_groups;
use fieldrank::fields::InteractionMode;
use fieldrank::synth::{generate, SynthSpec};
use fieldrank::train::{train_model, HyperParams};
use fieldrank::{Architecture, Error, ModelConfig};

#[test]
fn saved_model_evaluates_identically() {
    let spec = SynthSpec {
        query_count: 400,
        doc_count: 300,
        ..SynthSpec::default()
    };
    let data = generate(&spec).unwrap();
    let corpus = Corpus::from_records(data.documents);
    let folds = temporal_split(&build_query_groups(&data.events, &corpus).groups).unwrap();
    let fold = &folds.folds[0];
    let hyper = HyperParams {
        max_epochs: 2,
        ..HyperParams::default()
    };
    let dir = tempfile::tempdir().unwrap();
    for (i, architecture) in [Architecture::Nrmf, Architecture::Fwfm]
        .into_iter()
        .enumerate()
    {
        let config = ModelConfig::new(architecture, InteractionMode::All, true);
        let (trained, _) = train_model(&config, fold, &corpus, &hyper).unwrap();
        let path = dir.path().join(format!("m{i}.ckpt"));
        save(&path, &trained).unwrap();
        let restored = load(&path).unwrap();
        assert_eq!(
            restored.model.store().snapshot(),
            trained.model.store().snapshot()
        );
        assert_eq!(restored.encoder, trained.encoder);
        let a = evaluate_groups(&trained, &fold.validation, &corpus, 0, 20).unwrap();
        let b = evaluate_groups(&restored, &fold.validation, &corpus, 0, 20).unwrap();
        assert_eq!(a, b);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load(&path),
            Err(Error::Checkpoint(_)) | Err(Error::Io(_))
        ));
    }
}

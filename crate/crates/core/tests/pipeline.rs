//! Runner-level integration: the edit → evaluate → report pipeline on a
//! miniature synthetic world.

use std::fs;
use std::path::Path;

use saulkit::runner::{
    cmd_edit, cmd_eval, cmd_report, RunnerError, TableFormat, CASE_RECORDS, POST_CHECKPOINT,
    PRE_CHECKPOINT, REPORT_FILE,
};

const MINI_CONFIG: &str = "\
dataset.kind = synthetic
world.entities = 6
world.relations = 2
world.objects_per_relation = 3
model.layers = 2
model.dim = 16
model.heads = 2
model.context = 32
pretrain.epochs = 3
editor.epochs = 2
editor.patience = 2
editor.lr = 1e-3
editor.n_random_facts = 2
eval.gen_length = 6
eval.gen_prompts_per_case = 1
seed = 21
";

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn zero_lr_run_has_identical_checkpoints_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        &MINI_CONFIG.replace("editor.lr = 1e-3", "editor.lr = 0.0"),
    );
    let dirs = cmd_edit(&config, Some(&tmp.path().join("out"))).unwrap();
    assert_eq!(dirs.len(), 1);
    let run_dir = &dirs[0];
    assert_eq!(
        read(&run_dir.join(PRE_CHECKPOINT)),
        read(&run_dir.join(POST_CHECKPOINT)),
        "zero step size must leave the checkpoint bytes unchanged"
    );
    cmd_eval(run_dir).unwrap();
    assert!(run_dir.join(REPORT_FILE).exists());
}

#[test]
fn identical_configs_give_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), MINI_CONFIG);
    let a = cmd_edit(&config, Some(&tmp.path().join("a"))).unwrap();
    let b = cmd_edit(&config, Some(&tmp.path().join("b"))).unwrap();
    for (da, db) in a.iter().zip(&b) {
        assert_eq!(
            read(&da.join(PRE_CHECKPOINT)),
            read(&db.join(PRE_CHECKPOINT))
        );
        assert_eq!(
            read(&da.join(POST_CHECKPOINT)),
            read(&db.join(POST_CHECKPOINT))
        );
        assert_eq!(read(&da.join("losses.json")), read(&db.join("losses.json")));
        cmd_eval(da).unwrap();
        cmd_eval(db).unwrap();
        assert_eq!(read(&da.join(CASE_RECORDS)), read(&db.join(CASE_RECORDS)));
        assert_eq!(read(&da.join(REPORT_FILE)), read(&db.join(REPORT_FILE)));
    }
}

#[test]
fn eval_is_idempotent_and_works_from_a_copied_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), MINI_CONFIG);
    let dirs = cmd_edit(&config, Some(&tmp.path().join("out"))).unwrap();
    let run_dir = &dirs[0];
    cmd_eval(run_dir).unwrap();
    let first_report = read(&run_dir.join(REPORT_FILE));
    let first_cases = read(&run_dir.join(CASE_RECORDS));
    cmd_eval(run_dir).unwrap();
    assert_eq!(first_report, read(&run_dir.join(REPORT_FILE)));
    assert_eq!(first_cases, read(&run_dir.join(CASE_RECORDS)));

    // Self-contained: a copied directory evaluates with no other state.
    let copy = tmp.path().join("copied-run");
    fs::create_dir_all(&copy).unwrap();
    for entry in fs::read_dir(run_dir).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), copy.join(entry.file_name())).unwrap();
    }
    cmd_eval(&copy).unwrap();
    assert_eq!(first_report, read(&copy.join(REPORT_FILE)));
}

#[test]
fn grid_shares_one_pre_edit_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        &MINI_CONFIG.replace("seed = 21", "method = saul_r, ft, ft_r\nseed = 21"),
    );
    let dirs = cmd_edit(&config, Some(&tmp.path().join("out"))).unwrap();
    assert_eq!(dirs.len(), 3);
    assert!(dirs[0].ends_with("saul_r"));
    assert!(dirs[1].ends_with("ft"));
    assert!(dirs[2].ends_with("ft_r"));
    let pre = read(&dirs[0].join(PRE_CHECKPOINT));
    for d in &dirs[1..] {
        assert_eq!(pre, read(&d.join(PRE_CHECKPOINT)));
    }
}

#[test]
fn report_accepts_published_constants_and_rejects_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), MINI_CONFIG);
    let dirs = cmd_edit(&config, Some(&tmp.path().join("out"))).unwrap();
    let run_dir = &dirs[0];
    cmd_eval(run_dir).unwrap();

    // Overwrite the stored aggregates with the published reference row;
    // the stored score 87.7 must survive the harmonic recomputation gate.
    let report_path = run_dir.join(REPORT_FILE);
    let mut report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    report["efficacy"] = 99.6.into();
    report["generality"] = 92.8.into();
    report["locality"] = 74.6.into();
    report["score"] = 87.7.into();
    fs::write(&report_path, serde_json::to_string_pretty(&report).unwrap()).unwrap();
    let table = cmd_report(std::slice::from_ref(run_dir), TableFormat::Csv).unwrap();
    assert!(table.contains("87.7"));

    // A stored score that disagrees with its parts by more than 0.05 is an
    // integrity error naming the run.
    report["score"] = 86.4.into();
    fs::write(&report_path, serde_json::to_string_pretty(&report).unwrap()).unwrap();
    let err = cmd_report(std::slice::from_ref(run_dir), TableFormat::Csv).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    match err {
        RunnerError::Integrity(msg) => {
            assert!(msg.contains(&run_dir.display().to_string()), "{msg}")
        }
        other => panic!("expected integrity error, got {other}"),
    }
}

#[test]
fn empty_run_list_is_a_usage_error() {
    let err = cmd_report(&[], TableFormat::Markdown).unwrap_err();
    assert!(matches!(err, RunnerError::Usage(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn fixture_dataset_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("cf.json");
    fs::write(&dataset, saulkit::factstore::fixtures::COUNTERFACT_SAMPLE).unwrap();
    let refs = tmp.path().join("refs.json");
    fs::write(&refs, saulkit::factstore::fixtures::COUNTERFACT_REFERENCES).unwrap();
    let config = write_config(
        tmp.path(),
        &format!(
            "dataset.kind = counterfact\n\
             dataset.path = {}\n\
             dataset.references = {}\n\
             model.layers = 2\n\
             model.dim = 16\n\
             model.heads = 2\n\
             model.context = 48\n\
             pretrain.epochs = 3\n\
             editor.epochs = 1\n\
             editor.patience = 1\n\
             editor.n_random_facts = 3\n\
             eval.gen_length = 5\n\
             eval.gen_prompts_per_case = 1\n\
             method = saul_r\n",
            dataset.display(),
            refs.display()
        ),
    );
    let dirs = cmd_edit(&config, Some(&tmp.path().join("out"))).unwrap();
    let report = cmd_eval(&dirs[0]).unwrap();
    assert_eq!(report.n_cases, 5);
    assert!(
        report.consistency.is_some(),
        "reference texts were supplied"
    );
}

#[test]
fn evaluate_run_loads_the_referenced_checkpoint() {
    use saulkit::editkit::{pretrain, run_edit, EditorConfig, PretrainConfig};
    use saulkit::evalsuite::{evaluate_run, EvalOptions};
    use saulkit::factstore::{build_pool, Method, SynthWorld, WorldParams};
    use saulkit::lmcore::{save_checkpoint, Checkpoint, ModelConfig};

    let tmp = tempfile::tempdir().unwrap();
    let world = SynthWorld::generate(WorldParams {
        seed: 6,
        n_entities: 6,
        n_relations: 2,
        objects_per_relation: 3,
    })
    .unwrap();
    let (model, _) = pretrain::<f64>(
        &world.corpus,
        &[],
        &PretrainConfig {
            arch: ModelConfig::tiny(),
            epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            seed: 6,
        },
    )
    .unwrap();
    let pool = build_pool(&world.edits, &world.pool_facts, 2, 6).unwrap();
    let config = EditorConfig {
        method: Method::SaulR,
        epochs: 1,
        patience: 1,
        batch_size: 8,
        lr: 1e-3,
        n_random_facts: 2,
        seed: 6,
        ..EditorConfig::default()
    };
    let (post, mut run) = run_edit(model, &world.edits, Some(&pool), None, &config).unwrap();
    let ckpt_path = tmp.path().join("post.json");
    save_checkpoint(&ckpt_path, &Checkpoint::from_model(&post, None)).unwrap();
    run.post_model_ref = Some(ckpt_path.display().to_string());

    let opts = EvalOptions {
        gen_prompts_per_case: 1,
        gen_length: 5,
        ..EvalOptions::default()
    };
    let (cases, report) =
        evaluate_run::<f64>(&run, &world.edits, &opts, &world.references()).unwrap();
    assert_eq!(cases.len(), world.edits.len());
    assert_eq!(report.n_cases, world.edits.len());

    // A run without a loadable checkpoint is an error.
    run.post_model_ref = Some(tmp.path().join("missing.json").display().to_string());
    assert!(evaluate_run::<f64>(&run, &world.edits, &opts, &world.references()).is_err());
}

#[test]
fn zsre_style_runs_report_consistency_absent() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = tmp.path().join("zsre.json");
    fs::write(&dataset, saulkit::factstore::fixtures::ZSRE_SAMPLE).unwrap();
    let config = write_config(
        tmp.path(),
        &format!(
            "dataset.kind = zsre\n\
             dataset.path = {}\n\
             model.layers = 2\n\
             model.dim = 16\n\
             model.heads = 2\n\
             model.context = 48\n\
             pretrain.epochs = 3\n\
             editor.epochs = 1\n\
             editor.patience = 1\n\
             method = ft\n",
            dataset.display()
        ),
    );
    let dirs = cmd_edit(&config, Some(&tmp.path().join("out"))).unwrap();
    let report = cmd_eval(&dirs[0]).unwrap();
    assert_eq!(report.n_cases, 5);
    assert!(report.consistency.is_none(), "no reference texts exist");
    assert!(report.generality.is_some());
    assert!(report.locality.is_some());
}

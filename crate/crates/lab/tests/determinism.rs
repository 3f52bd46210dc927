use std::path::Path;

use oseledets_lab::{run, Command, RunOptions, Scenario};

fn load(name: &str) -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)).unwrap()
}

/// Small versions of the shipped scenarios, one per subcommand.
fn cases() -> Vec<(Command, Scenario)> {
    let mut cob = load("cat_coboundary.toml");
    cob.sampling.points = 12;
    cob.verify.pairs_per_bin = 1;
    let mut dbl = load("doubling_coboundary.toml");
    dbl.sampling.points = 12;
    dbl.filtration.pairs = 12;
    dbl.filtration.block_n = 8;
    let mut lemma = load("lemma_lab.toml");
    lemma.lemma.instances = 30;
    let mut cat = load("cat_constant.toml");
    cat.spectrum.horizon = 512;
    vec![
        (Command::Spectrum, cat),
        (Command::Splitting, cob.clone()),
        (Command::Splitting, dbl.clone()),
        (Command::RegularSet, cob.clone()),
        (Command::Verify, cob),
        (Command::Filtration, dbl),
        (Command::LemmaLab, lemma),
    ]
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn byte_identical_across_reruns_and_thread_counts() {
    let root = tempfile::tempdir().unwrap();
    for (k, (cmd, s)) in cases().into_iter().enumerate() {
        let mut seen = Vec::new();
        for (tag, threads) in [("a", Some(1)), ("b", Some(8)), ("c", Some(8))] {
            let out = root.path().join(format!("{k}{tag}"));
            let m = run(cmd, &s, &RunOptions { out: Some(out.clone()), threads, ..Default::default() }).unwrap();
            let digests: Vec<(String, String)> = m.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect();
            seen.push((outputs(&out.join(cmd.name())), digests, m.scenario_hash));
        }
        assert!(seen.windows(2).all(|w| w[0] == w[1]), "{} differs", cmd.name());
    }
}

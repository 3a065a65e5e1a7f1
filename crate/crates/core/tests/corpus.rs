use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use scenekg_core::fixtures::{corpus_hash, generate_fixtures, HASH_FILE};
use scenekg_core::rules::RulePack;
use scenekg_core::taxonomy::TBox;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn read_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            read_tree(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            out.insert(rel, fs::read_to_string(&path).unwrap());
        }
    }
}

#[test]
fn checked_in_corpus_matches_seed_zero() {
    let tbox = TBox::shipped();
    let generated = generate_fixtures(0, &tbox, &RulePack::shipped(&tbox)).unwrap();
    let root = corpus_dir();
    let mut on_disk = BTreeMap::new();
    read_tree(&root, &root, &mut on_disk);
    assert_eq!(on_disk.keys().collect::<Vec<_>>(), generated.keys().collect::<Vec<_>>());
    for (path, content) in &generated {
        assert_eq!(&on_disk[path], content, "{path} drifted; regenerate with `scenekg fixtures`");
    }
    assert_eq!(on_disk[HASH_FILE].trim(), corpus_hash(&on_disk));
}

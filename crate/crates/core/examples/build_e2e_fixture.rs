//! Regenerates `fixtures/e2e/cache` and `fixtures/e2e/golden`.
//!
//! Model transcripts come from `fixtures/e2e/transcripts`; judge and
//! embedding responses are recorded from the stub backends. Golden files are
//! taken from a replay run and checked against a second replay run.

#[path = "../tests/common/mod.rs"]
mod common;

use std::fs;

use quiet_core::Mode;

fn main() {
    let dir = common::fixture_dir();
    let cache = dir.join("cache");
    let golden = dir.join("golden");
    for d in [&cache, &golden] {
        if d.exists() {
            fs::remove_dir_all(d).unwrap();
        }
    }
    common::seed_transcripts(&cache);

    let scratch = tempfile::tempdir().unwrap();
    common::run_fixture(&scratch.path().join("record"), Mode::Record, &cache).unwrap();
    common::run_fixture(&golden, Mode::Replay, &cache).unwrap();
    let check = scratch.path().join("replay");
    common::run_fixture(&check, Mode::Replay, &cache).unwrap();
    let diffs = common::diff_trees(&golden, &check);
    assert!(diffs.is_empty(), "replay runs differ: {diffs:?}");
    println!("wrote {} golden files", common::files_under(&golden).len());
}

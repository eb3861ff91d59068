pub mod data;
pub mod evaluate;
pub mod train;
pub mod verify;

use std::path::Path;

use fuseformer::data::{load_corpus, split_path, RawExample, Schema};

use crate::error::{CliError, CliResult};

/// Loads one split (a file, or `<dir>/<split>.jsonl`) and rejects it when
/// empty.
pub fn load_split(corpus: &Path, split: &str, schema: Schema) -> CliResult<Vec<RawExample>> {
    let path = split_path(corpus, split);
    let examples = load_corpus(&path, schema)?;
    if examples.is_empty() {
        return Err(CliError::input(format!(
            "{} holds no examples",
            path.display()
        )));
    }
    Ok(examples)
}

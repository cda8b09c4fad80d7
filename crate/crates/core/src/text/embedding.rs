use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pretrained vectors aligned to a vocabulary, one row per id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Tensor,
    pub trainable: bool,
    /// Vocabulary entries that had a vector in the file.
    pub found: usize,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }
}

/// Reads a GloVe-style text file: a token then `dim` whitespace-separated
/// numbers per line. Lines of the wrong arity are skipped with a warning.
/// Vocabulary tokens missing from the file get all-zero rows.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, trainable: bool) -> Result<EmbeddingMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), vocab, dim, trainable, &path.display().to_string())
}

pub fn parse_embeddings<R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    dim: usize,
    trainable: bool,
    source: &str,
) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut values = Tensor::zeros(&[vocab.len(), dim]);
    let mut seen = vec![false; vocab.len()];
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let nums: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let nums = match nums {
            Ok(v) if v.len() == dim => v,
            _ => {
                warn!("{source}:{}: skipping line with wrong arity or bad number", lineno + 1);
                continue;
            }
        };
        let Some(id) = vocab.get(token) else { continue };
        if seen[id] {
            continue;
        }
        seen[id] = true;
        values.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&nums);
    }
    let found = seen.iter().filter(|&&s| s).count();
    Ok(EmbeddingMatrix { values, trainable, found })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_tokens_are_zero_and_bad_lines_skipped() {
        let vocab = Vocabulary::build("cat dog bird".split(' '), 10);
        let text = "cat 0.5 1.5\ndog 1 2 3\nfish 9 9\nbird x 1\n\n";
        let emb = parse_embeddings(text.as_bytes(), &vocab, 2, false, "mem").unwrap();
        assert_eq!(emb.found, 1);
        assert_eq!(emb.values.row_slice(vocab.id("cat")), &[0.5, 1.5]);
        for t in ["dog", "bird", "<unk>", "<pad>"] {
            assert_eq!(emb.values.row_slice(vocab.id(t)), &[0.0, 0.0], "{t}");
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let vocab = Vocabulary::build(std::iter::empty(), 10);
        let err = load_embeddings(Path::new("/no/such/glove.txt"), &vocab, 4, true).unwrap_err();
        assert!(err.to_string().contains("/no/such/glove.txt"));
    }
}

//! Tokenization, vocabulary, embeddings, dataset ingestion and IOB labels.

mod dataset;
mod embedding;
mod iob;
mod tokenize;
mod vocab;

pub use dataset::{
    build_dataset, load_annotations, load_dataset, AnnotationRecord, AnnotationSpan, Dataset, LoadReport, Paragraph,
    QaExample, SquadAnswer, SquadArticle, SquadFile, SquadParagraph, SquadQa,
};
pub use embedding::{load_embeddings, parse_embeddings, EmbeddingMatrix};
pub use iob::{derive_iob_labels, extract_candidate_spans, merge_external_answer_annotations, merge_spans, IobLabels, IobTag};
pub use tokenize::{char_span_to_token_span, sentence_ranges, tokenize, AnswerSpan, Token};
pub use vocab::{Vocabulary, END, END_TOKEN, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

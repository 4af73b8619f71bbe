//! Personalized ranking of messages for a user context.

pub mod context;
pub mod lda;
pub mod ranker;

pub use context::{expand_context, CandidateIndex, ExpandedContext, ExpansionParams, IndexedMessage, Stopwords, topic_tokens, UserContext};
pub use lda::{fit_lda, LdaParams, TopicModel};
pub use ranker::{
    cross_validate, extract_rank_features, precision_at, rank_and_evaluate, rank_scored, read_judgments, majority_judgments, tfidf_scores, train_ranker, write_ranked, JudgmentRow, FeatureSet, JudgedCandidate,
    RankFeatures, RankMode, RankerParams,
};

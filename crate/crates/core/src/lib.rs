//! Similarity search over large collections of data series using sortable
//! SAX summaries: bulk-loaded trie and tree indexes, an LSM variant for
//! streaming inserts, and exact window queries over recent data.

pub mod bench;
pub mod error;
pub mod extsort;
pub mod lsm;
pub mod record;
pub mod search;
pub mod series;
pub mod storage;
pub mod summarization;
pub mod sweep;
pub mod tree;
pub mod trie;

pub use error::{Error, Result};
pub use search::{Answer, Neighbor, SearchStats, WindowFilter};
pub use series::{DataSeries, Query, RandomWalk};
pub use storage::{IoContext, IoSnapshot};
pub use summarization::{InvSaxKey, Summarizer, SummaryConfig};
pub use tree::{TreeIndex, TreeParams};
pub use trie::{TrieIndex, TrieParams};
pub use lsm::{LsmIndex, LsmLayout, LsmParams, WindowSpec, WindowStrategy};

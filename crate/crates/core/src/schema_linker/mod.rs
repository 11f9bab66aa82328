//! Question↔schema linking by name n-grams and by database values.

mod names;
mod snapshot;
mod values;

pub use names::{name_link, LinkerConfig, NameLinkResult, SubsequenceMode, MAX_NGRAM};
pub use snapshot::{read_csv_snapshot, read_sqlite_snapshot, DbRows};
pub use values::{build_value_index, value_link, CellValue, ValueIndex, VALUE_INDEX_VERSION};

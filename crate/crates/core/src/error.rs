use thiserror::Error;

use crate::bitmap::BitmapError;
use crate::container::ContainerError;
use crate::corpus::CorpusError;
use crate::sequitur::GrammarError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Bitmap(#[from] BitmapError),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("worker failed: {0}")]
    Worker(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

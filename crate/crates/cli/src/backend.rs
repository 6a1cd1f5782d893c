use std::path::PathBuf;

use bskiplist::{BSkipList, BlockStore, FileStore, HashSeeds, MemStore, Params};

use crate::error::CliResult;

pub type DynStore = Box<dyn BlockStore + Send>;
pub type List = BSkipList<DynStore>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Backend {
    #[default]
    Mem,
    File(PathBuf),
}

impl Backend {
    /// Same backend, with `tag` appended to the file name.
    pub fn tagged(&self, tag: &str) -> Backend {
        match self {
            Backend::Mem => Backend::Mem,
            Backend::File(p) => {
                let mut name = p.clone().into_os_string();
                name.push(format!(".{tag}"));
                Backend::File(name.into())
            }
        }
    }

    pub fn create(&self, params: Params, master_seed: u64) -> CliResult<List> {
        let store: DynStore = match self {
            Backend::Mem => Box::new(MemStore::for_params(&params)?),
            Backend::File(path) => Box::new(FileStore::create(path, &params, master_seed)?),
        };
        Ok(BSkipList::new(params, HashSeeds::from_master(master_seed), store)?)
    }

    pub fn remove(&self) {
        if let Backend::File(p) = self {
            let _ = std::fs::remove_file(p);
        }
    }
}

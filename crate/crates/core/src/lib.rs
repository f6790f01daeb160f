pub mod contract;
pub mod digest;
pub mod doc;
pub mod grain;
pub mod identity;
pub mod ledger;
pub mod network;
pub mod qa;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/documents.md")]
    mod documents {}
    #[doc = include_str!("../../../book/src/ledger.md")]
    mod ledger {}
    #[doc = include_str!("../../../book/src/identity.md")]
    mod identity {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/grain.md")]
    mod grain {}
    #[doc = include_str!("../../../book/src/qa.md")]
    mod qa {}
    #[doc = include_str!("../../../book/src/operations.md")]
    mod operations {}
}

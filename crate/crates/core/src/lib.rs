pub mod numerics;
pub mod em_model;
pub mod impm;
pub mod pcdm;
pub mod search;
pub mod oracle;

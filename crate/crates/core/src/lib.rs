//! Interpretable graph neural network for classifying brain connectivity
//! graphs, with community detection and saliency scoring on top.

pub mod autodiff;
pub mod boxcox;
pub mod community;
pub mod graph;
pub mod model;
pub mod rng;
pub mod saliency;
pub mod synthetic;
pub mod trainer;

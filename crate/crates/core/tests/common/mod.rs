#![allow(dead_code)]

pub mod colmap_fixture;

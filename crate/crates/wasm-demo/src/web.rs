//! JavaScript bindings. Every query returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use crate::Lab;

fn to_js<T: Serialize>(r: retrieval_uq::Result<T>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct DemoLab {
    lab: Lab,
}

#[wasm_bindgen]
impl DemoLab {
    /// Train the reference toy configuration with `key = value` overrides.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, overrides: &str) -> Result<DemoLab, JsError> {
        Lab::train(seed as u64, overrides)
            .map(|lab| DemoLab { lab })
            .map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn summary(&self) -> Result<String, JsError> {
        to_js(Ok(self.lab.summary()))
    }

    pub fn averaging(&self, temperature: f64, k: usize) -> Result<String, JsError> {
        to_js(self.lab.averaging(temperature, k))
    }

    pub fn rejection(&self, k: usize, temperature: f64) -> Result<String, JsError> {
        to_js(self.lab.rejection(k, temperature))
    }

    pub fn shift(&self, temperature: f64, bins: usize) -> Result<String, JsError> {
        to_js(self.lab.shift(temperature, bins))
    }
}

//! In-browser demo: one local session over the sample catalog (or a
//! catalog passed in as JSON). Every method returns a JSON string shaped
//! like the corresponding HTTP response body, errors included, so the page
//! only ever parses JSON.

use std::sync::Arc;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use whynot_core::catalog::Catalog;
use whynot_core::llm_gateway::Gateway;
use whynot_core::service::{Session, SessionError};

#[cfg(target_arch = "wasm32")]
#[wasm_bindgen]
extern "C" {
    #[wasm_bindgen(js_namespace = Date)]
    fn now() -> f64;
}

#[cfg(target_arch = "wasm32")]
fn clock() -> u64 {
    now() as u64
}

#[cfg(not(target_arch = "wasm32"))]
fn clock() -> u64 {
    whynot_core::service::system_clock()
}

fn error_json(e: SessionError) -> Value {
    let message = e.to_string();
    let mut v = match e {
        SessionError::Parse(p) => serde_json::to_value(&p).expect("parse errors serialize"),
        _ => json!({}),
    };
    v["error"] = Value::String(message);
    v
}

fn to_string<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("response serializes")
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
}

#[wasm_bindgen]
impl Demo {
    /// Opens a session. An empty string means the bundled sample catalog.
    #[wasm_bindgen(constructor)]
    pub fn new(catalog_json: &str) -> Result<Demo, String> {
        let catalog = if catalog_json.trim().is_empty() {
            Catalog::sample()
        } else {
            Catalog::from_json(catalog_json).map_err(|e| e.to_string())?
        };
        Ok(Demo {
            session: Session::create("demo".into(), Arc::new(catalog), Arc::new(Gateway::disabled()), clock),
        })
    }

    /// `{status:"ok", schedule}` or `{status:"infeasible"}`.
    pub fn schedule(&self) -> String {
        to_string(&self.session.status())
    }

    /// `{status:"ok", schedule}` with a schedule not shown before, or
    /// `{status:"exhausted"}`.
    pub fn next_schedule(&mut self) -> String {
        to_string(&self.session.next_schedule())
    }

    /// Parses a question. Returns the restatement and its token, or a
    /// structured parse error.
    pub fn ask(&mut self, text: &str) -> String {
        match self.session.submit_query(text) {
            Ok(r) => to_string(&r),
            Err(e) => error_json(e).to_string(),
        }
    }

    /// Confirms or rejects a pending question.
    pub fn confirm(&mut self, token: &str, confirmed: bool) -> String {
        match self.session.confirm(token, confirmed) {
            Ok(r) => to_string(&r),
            Err(e) => error_json(e).to_string(),
        }
    }

    pub fn history(&self) -> String {
        to_string(&self.session.history())
    }
}

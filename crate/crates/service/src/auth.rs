//! Token principals and namespace-scoped authorization.
//!
//! The auth file is a JSON list of principals:
//!
//! ```json
//! [{"token": "s3cret", "role": "writer", "namespaces": ["teamA.*"]}]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;

use crate::error::{Result, ServiceError};
use crate::protocol::{Op, OpClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reader,
    Writer,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub token: String,
    pub role: Role,
    /// Glob patterns (`*`, `?`, `[...]`) over namespace names.
    pub namespaces: Vec<String>,
}

impl Principal {
    pub fn new(token: impl Into<String>, role: Role, namespaces: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            token: token.into(),
            role,
            namespaces: namespaces.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Allow,
    /// The namespace is not granted to this principal.
    DenyNamespace,
    /// The namespace is granted but the role may not run the operation.
    DenyRole,
}

impl Access {
    pub fn allowed(self) -> bool {
        self == Access::Allow
    }
}

fn namespace_granted(patterns: &[glob::Pattern], namespace: &str) -> bool {
    patterns.iter().any(|p| p.matches(namespace))
}

fn role_permits(role: Role, class: OpClass) -> bool {
    match class {
        OpClass::Read => true,
        OpClass::Write => role >= Role::Writer,
        OpClass::Admin => role == Role::Admin,
    }
}

/// Namespace check first, then the role check; admins skip only the latter.
pub fn authorize(principal: &Principal, namespace: &str, op: Op) -> Access {
    let patterns: Vec<glob::Pattern> = principal.namespaces.iter().filter_map(|g| glob::Pattern::new(g).ok()).collect();
    authorize_compiled(principal.role, &patterns, namespace, op)
}

fn authorize_compiled(role: Role, patterns: &[glob::Pattern], namespace: &str, op: Op) -> Access {
    if !namespace_granted(patterns, namespace) {
        Access::DenyNamespace
    } else if role == Role::Admin || role_permits(role, op.class()) {
        Access::Allow
    } else {
        Access::DenyRole
    }
}

struct Entry {
    principal: Principal,
    patterns: Vec<glob::Pattern>,
}

/// The set of known principals, with globs compiled once.
pub struct AuthTable {
    entries: Vec<Entry>,
}

impl std::fmt::Debug for AuthTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuthTable").field("principals", &self.entries.len()).finish()
    }
}

impl AuthTable {
    pub fn new(principals: Vec<Principal>) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::with_capacity(principals.len());
        for p in principals {
            if p.token.is_empty() {
                return Err(ServiceError::Config("principal with empty token".into()));
            }
            if entries.iter().any(|e| e.principal.token == p.token) {
                return Err(ServiceError::Config("duplicate principal token".into()));
            }
            let patterns = p
                .namespaces
                .iter()
                .map(|g| glob::Pattern::new(g).map_err(|e| ServiceError::Config(format!("namespace glob {g:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            entries.push(Entry { principal: p, patterns });
        }
        Ok(Self { entries })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let principals: Vec<Principal> =
            serde_json::from_str(text).map_err(|e| ServiceError::Config(format!("auth file: {e}")))?;
        Self::new(principals)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("auth file {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Compares against every token in constant time per comparison and
    /// without stopping at the first match.
    pub fn resolve(&self, token: &str) -> Option<&Principal> {
        let mut found = None;
        for e in &self.entries {
            if bool::from(e.principal.token.as_bytes().ct_eq(token.as_bytes())) {
                found = Some(&e.principal);
            }
        }
        found
    }

    pub fn authorize_token(&self, token: &str, namespace: &str, op: Op) -> Option<Access> {
        let p = self.resolve(token)?;
        let e = self.entries.iter().find(|e| std::ptr::eq(&e.principal, p))?;
        Some(authorize_compiled(p.role, &e.patterns, namespace, op))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roles_and_globs() {
        let reader = Principal::new("r", Role::Reader, ["notes"]);
        assert_eq!(authorize(&reader, "notes", Op::Recall), Access::Allow);
        assert_eq!(authorize(&reader, "notes", Op::PutRecord), Access::DenyRole);
        let writer = Principal::new("w", Role::Writer, ["teamA.*"]);
        assert_eq!(authorize(&writer, "teamA.x", Op::PutRecord), Access::Allow);
        assert_eq!(authorize(&writer, "teamB.x", Op::Stats), Access::DenyNamespace);
        assert_eq!(authorize(&writer, "teamA.x", Op::ApplyDelta), Access::DenyRole);
        let admin = Principal::new("a", Role::Admin, ["ops"]);
        assert_eq!(authorize(&admin, "ops", Op::ApplyDelta), Access::Allow);
        assert_eq!(authorize(&admin, "other", Op::Stats), Access::DenyNamespace);
    }

    #[test]
    fn table_resolution() {
        let t = AuthTable::from_json(r#"[{"token":"abc","role":"reader","namespaces":["*"]}]"#).unwrap();
        assert_eq!(t.resolve("abc").unwrap().role, Role::Reader);
        assert!(t.resolve("ab").is_none());
        assert!(t.resolve("").is_none());
        assert!(AuthTable::from_json(r#"[{"token":"a","role":"root","namespaces":[]}]"#).is_err());
        let dup = vec![Principal::new("x", Role::Reader, ["a"]), Principal::new("x", Role::Admin, ["b"])];
        assert!(AuthTable::new(dup).is_err());
    }
}

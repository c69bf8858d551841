//! Route-family JSON documents.
//!
//! Envelope: `{"molecule_id", "reference_index", "routes": [...]}` plus an
//! optional `edit_counts` array. Each route is a tree of `{"type": "mol",
//! "smiles", "in_stock", "price", "children"}` and `{"type": "reaction",
//! "class_id", "metadata", "children"}` nodes. When `class_id` is absent the
//! reaction's `metadata.classification` string is used. Unknown keys are kept.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::{validate_route, MoleculeNode, ReactionNode, RouteError, RouteFamily, RouteTree};
use crate::chem::parse_smiles;

fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return text.len();
    }
    let mut offset = 0;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

fn structure(path: &str, message: impl Into<String>) -> RouteError {
    RouteError::Structure {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Parse and validate a route-family document. Structurally duplicate
/// candidates are dropped (the reference is always kept) and counted in
/// [`RouteFamily::duplicates_removed`].
pub fn parse_route_file(bytes: &[u8]) -> Result<RouteFamily, RouteError> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| RouteError::Json {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let Value::Object(mut env) = doc else {
        return Err(structure("$", "document must be an object"));
    };
    let molecule_id = match env.remove("molecule_id") {
        Some(Value::String(s)) => s,
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(structure("molecule_id", "missing or not a string")),
    };
    let reference_index = env
        .remove("reference_index")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| structure("reference_index", "missing or not a nonnegative integer"))?
        as usize;
    let Some(Value::Array(routes)) = env.remove("routes") else {
        return Err(structure("routes", "missing or not an array"));
    };
    let edit_counts = match env.remove("edit_counts") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(|v| v.as_u64().map(|n| n as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| structure("edit_counts", "entries must be nonnegative integers"))?,
        ),
        Some(_) => return Err(structure("edit_counts", "must be an array")),
    };

    let mut candidates = Vec::with_capacity(routes.len());
    for (i, node) in routes.into_iter().enumerate() {
        let path = format!("routes[{i}]");
        let root = molecule_from_json(node, &path)?;
        let route = RouteTree::new(root);
        validate_route(&route).map_err(|violations| {
            RouteError::Invalid(
                violations
                    .into_iter()
                    .map(|mut v| {
                        v.path = v.path.replacen("root", &path, 1);
                        v
                    })
                    .collect(),
            )
        })?;
        candidates.push(route);
    }
    let mut family = RouteFamily {
        molecule_id,
        reference_index,
        candidates,
        edit_counts,
        duplicates_removed: 0,
        extra: env.into_iter().collect(),
    };
    family.check()?;
    family.dedup();
    Ok(family)
}

fn take_children(obj: &mut Map<String, Value>, path: &str) -> Result<Vec<Value>, RouteError> {
    match obj.remove("children") {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(c)) => Ok(c),
        Some(_) => Err(structure(path, "'children' must be an array")),
    }
}

fn node_type(obj: &Map<String, Value>, path: &str) -> Result<String, RouteError> {
    match obj.get("type") {
        Some(Value::String(t)) => Ok(t.clone()),
        _ => Err(structure(path, "node without a string 'type'")),
    }
}

fn molecule_from_json(node: Value, path: &str) -> Result<MoleculeNode, RouteError> {
    let Value::Object(mut obj) = node else {
        return Err(structure(path, "node must be an object"));
    };
    let kind = node_type(&obj, path)?;
    if kind != "mol" {
        return Err(structure(
            path,
            format!("expected a 'mol' node, found '{kind}'"),
        ));
    }
    obj.remove("type");
    let smiles = match obj.remove("smiles") {
        Some(Value::String(s)) => s,
        _ => return Err(structure(path, "molecule without a 'smiles' string")),
    };
    parse_smiles(&smiles).map_err(|source| RouteError::Chem {
        path: path.to_string(),
        source,
    })?;
    let in_stock = match obj.remove("in_stock") {
        None | Some(Value::Null) => None,
        Some(Value::Bool(b)) => Some(b),
        Some(_) => return Err(structure(path, "'in_stock' must be a boolean")),
    };
    let price = match obj.remove("price") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => n.as_f64(),
        Some(_) => return Err(structure(path, "'price' must be a number")),
    };
    let children = take_children(&mut obj, path)?;
    let reaction = match children.len() {
        0 => None,
        1 => {
            let child = children.into_iter().next().expect("one child");
            Some(Box::new(reaction_from_json(
                child,
                &format!("{path}.children[0]"),
            )?))
        }
        n => {
            return Err(structure(
                path,
                format!("molecule has {n} reaction children, expected at most 1"),
            ))
        }
    };
    Ok(MoleculeNode {
        smiles,
        in_stock,
        price,
        extra: obj.into_iter().collect(),
        reaction,
    })
}

fn reaction_from_json(node: Value, path: &str) -> Result<ReactionNode, RouteError> {
    let Value::Object(mut obj) = node else {
        return Err(structure(path, "node must be an object"));
    };
    let kind = node_type(&obj, path)?;
    if kind != "reaction" {
        return Err(structure(
            path,
            format!("expected a 'reaction' node under a molecule, found '{kind}'"),
        ));
    }
    obj.remove("type");
    let metadata: BTreeMap<String, Value> = match obj.remove("metadata") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(m)) => m.into_iter().collect(),
        Some(_) => return Err(structure(path, "'metadata' must be an object")),
    };
    let class_id = match obj.remove("class_id") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(structure(path, "'class_id' must be a string")),
        None => match metadata.get("classification") {
            Some(Value::String(s)) => s.clone(),
            _ => {
                return Err(structure(
                    path,
                    "reaction without 'class_id' or metadata.classification",
                ))
            }
        },
    };
    let children = take_children(&mut obj, path)?;
    let reactants = children
        .into_iter()
        .enumerate()
        .map(|(i, c)| molecule_from_json(c, &format!("{path}.children[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReactionNode {
        class_id,
        metadata,
        extra: obj.into_iter().collect(),
        reactants,
    })
}

fn molecule_to_json(m: &MoleculeNode) -> Value {
    let mut obj: Map<String, Value> = m.extra.clone().into_iter().collect();
    obj.insert("type".into(), Value::String("mol".into()));
    obj.insert("smiles".into(), Value::String(m.smiles.clone()));
    if let Some(s) = m.in_stock {
        obj.insert("in_stock".into(), Value::Bool(s));
    }
    if let Some(p) = m.price {
        obj.insert(
            "price".into(),
            serde_json::Number::from_f64(p).map_or(Value::Null, Value::Number),
        );
    }
    if let Some(rxn) = &m.reaction {
        let mut r: Map<String, Value> = rxn.extra.clone().into_iter().collect();
        r.insert("type".into(), Value::String("reaction".into()));
        r.insert("class_id".into(), Value::String(rxn.class_id.clone()));
        if !rxn.metadata.is_empty() {
            r.insert(
                "metadata".into(),
                Value::Object(rxn.metadata.clone().into_iter().collect()),
            );
        }
        r.insert(
            "children".into(),
            Value::Array(rxn.reactants.iter().map(molecule_to_json).collect()),
        );
        obj.insert("children".into(), Value::Array(vec![Value::Object(r)]));
    }
    Value::Object(obj)
}

pub fn family_to_json(family: &RouteFamily) -> Value {
    let mut env: Map<String, Value> = family.extra.clone().into_iter().collect();
    env.insert(
        "molecule_id".into(),
        Value::String(family.molecule_id.clone()),
    );
    env.insert(
        "reference_index".into(),
        Value::from(family.reference_index),
    );
    if let Some(counts) = &family.edit_counts {
        env.insert("edit_counts".into(), Value::from(counts.clone()));
    }
    env.insert(
        "routes".into(),
        Value::Array(
            family
                .candidates
                .iter()
                .map(|r| molecule_to_json(&r.root))
                .collect(),
        ),
    );
    Value::Object(env)
}

/// Pretty-printed document with sorted keys and a trailing newline.
pub fn write_route_file(family: &RouteFamily) -> String {
    let mut s = serde_json::to_string_pretty(&family_to_json(family)).expect("serializable");
    s.push('\n');
    s
}

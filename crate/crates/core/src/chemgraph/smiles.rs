use std::collections::{HashMap, HashSet};

use super::{AtomRecord, BondOrder, BondRecord, MolGraph, SmilesError};

const ELEMENTS: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

/// Allowed valences for unbracketed organic-subset atoms, lowest first.
fn valences(element: &str) -> &'static [u32] {
    match element {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => &[],
    }
}

struct Pending {
    element: String,
    aromatic: bool,
    charge: i32,
    hcount: Option<u32>,
}

struct RawBond {
    a: usize,
    b: usize,
    order: Option<BondOrder>,
    pos: usize,
}

fn unsupported(position: usize, what: &str) -> SmilesError {
    SmilesError::Unsupported {
        position,
        what: what.to_string(),
    }
}

fn malformed(position: usize, what: impl Into<String>) -> SmilesError {
    SmilesError::Malformed {
        position,
        what: what.into(),
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    atoms: Vec<Pending>,
    bonds: Vec<RawBond>,
    bond_set: HashSet<(usize, usize)>,
    prev: Option<usize>,
    pending_bond: Option<(BondOrder, usize)>,
    branches: Vec<(usize, usize, usize)>,
    rings: HashMap<u32, (usize, Option<BondOrder>, usize)>,
}

impl<'a> Parser<'a> {
    fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        order: Option<BondOrder>,
        pos: usize,
    ) -> Result<(), SmilesError> {
        let key = (a.min(b), a.max(b));
        if !self.bond_set.insert(key) {
            return Err(malformed(
                pos,
                format!("duplicate bond between atoms {} and {}", key.0, key.1),
            ));
        }
        self.bonds.push(RawBond { a, b, order, pos });
        Ok(())
    }

    fn add_atom(&mut self, atom: Pending, pos: usize) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(p) = self.prev {
            let (order, bpos) = match self.pending_bond.take() {
                Some((o, bp)) => (Some(o), bp),
                None => (None, pos),
            };
            self.add_bond(p, idx, order, bpos)?;
        } else if let Some((_, bpos)) = self.pending_bond {
            return Err(malformed(bpos, "bond symbol without a preceding atom"));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_closure(&mut self, num: u32, pos: usize) -> Result<(), SmilesError> {
        let Some(p) = self.prev else {
            return Err(malformed(pos, "ring closure without a preceding atom"));
        };
        let here = self.pending_bond.take().map(|(o, _)| o);
        match self.rings.remove(&num) {
            Some((q, there, _)) => {
                if q == p {
                    return Err(malformed(
                        pos,
                        format!("ring closure {num} bonds an atom to itself"),
                    ));
                }
                let order = match (there, here) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(malformed(
                            pos,
                            format!("conflicting bond symbols on ring closure {num}"),
                        ))
                    }
                    (x, y) => x.or(y),
                };
                self.add_bond(q, p, order, pos)
            }
            None => {
                self.rings.insert(num, (p, here, pos));
                Ok(())
            }
        }
    }

    fn bracket(&mut self, start: usize) -> Result<usize, SmilesError> {
        let b = self.bytes;
        let mut i = start + 1;
        if i < b.len() && b[i].is_ascii_digit() {
            return Err(unsupported(i, "isotope label"));
        }
        if i >= b.len() {
            return Err(malformed(start, "unterminated bracket atom"));
        }
        let (element, aromatic) = match b[i] {
            b'*' => return Err(unsupported(i, "wildcard atom")),
            c if c.is_ascii_lowercase() => {
                let two = b
                    .get(i..i + 2)
                    .map(|s| std::str::from_utf8(s).unwrap_or(""));
                if matches!(two, Some("se") | Some("as")) {
                    i += 2;
                    let s = two.unwrap();
                    (s[..1].to_ascii_uppercase() + &s[1..], true)
                } else if b"bcnops".contains(&c) {
                    i += 1;
                    ((c as char).to_ascii_uppercase().to_string(), true)
                } else {
                    return Err(malformed(
                        i,
                        format!("unknown aromatic symbol '{}'", c as char),
                    ));
                }
            }
            c if c.is_ascii_uppercase() => {
                let two = if i + 1 < b.len() && b[i + 1].is_ascii_lowercase() {
                    Some(format!("{}{}", c as char, b[i + 1] as char))
                } else {
                    None
                };
                match two {
                    Some(t) if ELEMENTS.contains(&t.as_str()) => {
                        i += 2;
                        (t, false)
                    }
                    _ => {
                        let one = (c as char).to_string();
                        if !ELEMENTS.contains(&one.as_str()) {
                            return Err(malformed(i, format!("unknown element '{one}'")));
                        }
                        i += 1;
                        (one, false)
                    }
                }
            }
            c => {
                return Err(malformed(
                    i,
                    format!("unexpected '{}' in bracket atom", c as char),
                ))
            }
        };
        let mut hcount = None;
        let mut charge = 0i32;
        loop {
            let Some(&c) = b.get(i) else {
                return Err(malformed(start, "unterminated bracket atom"));
            };
            match c {
                b']' => {
                    i += 1;
                    break;
                }
                b'@' => return Err(unsupported(i, "chirality")),
                b':' => return Err(unsupported(i, "atom class")),
                b'H' if hcount.is_none() && charge == 0 => {
                    i += 1;
                    let (n, used) = digits(&b[i..]);
                    hcount = Some(if used == 0 { 1 } else { n });
                    i += used;
                }
                b'+' | b'-' if charge == 0 => {
                    let sign = if c == b'+' { 1 } else { -1 };
                    i += 1;
                    let (n, used) = digits(&b[i..]);
                    if used > 0 {
                        charge = sign * n as i32;
                        i += used;
                    } else {
                        let mut mag = 1;
                        while b.get(i) == Some(&c) {
                            mag += 1;
                            i += 1;
                        }
                        charge = sign * mag;
                    }
                }
                _ => {
                    return Err(malformed(
                        i,
                        format!("unexpected '{}' in bracket atom", c as char),
                    ))
                }
            }
        }
        self.add_atom(
            Pending {
                element,
                aromatic,
                charge,
                hcount: Some(hcount.unwrap_or(0)),
            },
            start,
        )?;
        Ok(i)
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        let b = self.bytes;
        let mut i = 0;
        while i < b.len() {
            let c = b[i];
            match c {
                b'(' => {
                    let Some(p) = self.prev else {
                        return Err(malformed(i, "branch without a preceding atom"));
                    };
                    if self.pending_bond.is_some() {
                        return Err(malformed(i, "bond symbol before '('"));
                    }
                    self.branches.push((p, self.atoms.len(), i));
                    i += 1;
                }
                b')' => {
                    if let Some((_, bpos)) = self.pending_bond {
                        return Err(malformed(bpos, "dangling bond symbol"));
                    }
                    let Some((p, count_at_open, _)) = self.branches.pop() else {
                        return Err(malformed(i, "unbalanced ')'"));
                    };
                    if self.atoms.len() == count_at_open {
                        return Err(malformed(i, "empty branch"));
                    }
                    self.prev = Some(p);
                    i += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.pending_bond.is_some() {
                        return Err(malformed(i, "consecutive bond symbols"));
                    }
                    if self.prev.is_none() {
                        return Err(malformed(i, "bond symbol without a preceding atom"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending_bond = Some((order, i));
                    i += 1;
                }
                b'/' | b'\\' => return Err(unsupported(i, "directional bond (stereo)")),
                b'.' => return Err(unsupported(i, "disconnected fragments ('.')")),
                b'$' => return Err(unsupported(i, "quadruple bond")),
                b'*' => return Err(unsupported(i, "wildcard atom")),
                b'@' => return Err(unsupported(i, "chirality")),
                b'0'..=b'9' => {
                    self.ring_closure((c - b'0') as u32, i)?;
                    i += 1;
                }
                b'%' => {
                    match (b.get(i + 1), b.get(i + 2)) {
                        (Some(d1), Some(d2)) if d1.is_ascii_digit() && d2.is_ascii_digit() => {
                            let num = ((d1 - b'0') * 10 + (d2 - b'0')) as u32;
                            self.ring_closure(num, i)?;
                        }
                        _ => return Err(malformed(i, "'%' must be followed by two digits")),
                    }
                    i += 3;
                }
                b'[' => {
                    i = self.bracket(i)?;
                }
                b'B' | b'C' => {
                    let (sym, len) = match (c, b.get(i + 1)) {
                        (b'B', Some(b'r')) => ("Br", 2),
                        (b'C', Some(b'l')) => ("Cl", 2),
                        (b'B', _) => ("B", 1),
                        _ => ("C", 1),
                    };
                    self.add_atom(organic(sym, false), i)?;
                    i += len;
                }
                b'N' | b'O' | b'P' | b'S' | b'F' | b'I' => {
                    self.add_atom(organic(&(c as char).to_string(), false), i)?;
                    i += 1;
                }
                b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                    self.add_atom(
                        organic(&(c as char).to_ascii_uppercase().to_string(), true),
                        i,
                    )?;
                    i += 1;
                }
                c if c.is_ascii_uppercase() => {
                    return Err(malformed(
                        i,
                        format!(
                            "'{}' is not an organic-subset atom; write it in brackets",
                            c as char
                        ),
                    ))
                }
                c if c.is_ascii_whitespace() => {
                    return Err(malformed(i, "whitespace inside SMILES"))
                }
                _ => {
                    let ch = std::str::from_utf8(&b[i..])
                        .ok()
                        .and_then(|s| s.chars().next())
                        .unwrap_or('?');
                    return Err(malformed(i, format!("unexpected character '{ch}'")));
                }
            }
        }
        if let Some((_, bpos)) = self.pending_bond {
            return Err(malformed(bpos, "dangling bond symbol"));
        }
        if let Some(&(_, _, pos)) = self.branches.last() {
            return Err(malformed(pos, "unclosed '('"));
        }
        if let Some((num, &(_, _, pos))) = self.rings.iter().min_by_key(|(_, v)| v.2) {
            return Err(malformed(pos, format!("unclosed ring {num}")));
        }
        if self.atoms.is_empty() {
            return Err(malformed(0, "no atoms"));
        }
        Ok(())
    }
}

fn organic(sym: &str, aromatic: bool) -> Pending {
    Pending {
        element: sym.to_string(),
        aromatic,
        charge: 0,
        hcount: None,
    }
}

fn digits(b: &[u8]) -> (u32, usize) {
    let mut n = 0u32;
    let mut used = 0;
    while used < b.len() && b[used].is_ascii_digit() && used < 3 {
        n = n * 10 + (b[used] - b'0') as u32;
        used += 1;
    }
    (n, used)
}

/// `true` for every edge lying on a cycle (i.e. every non-bridge).
pub(crate) fn ring_bonds(n: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let mut adj = vec![Vec::new(); n];
    for (k, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, k));
        adj[b].push((a, k));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut bridge = vec![false; edges.len()];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // Iterative DFS: (vertex, parent edge, next adjacency index).
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(top) = stack.last_mut() {
            let (u, pe, next) = *top;
            if next < adj[u].len() {
                top.2 += 1;
                let (v, e) = adj[u][next];
                if e == pe {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, e, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        bridge[pe] = true;
                    }
                }
            }
        }
    }
    bridge.into_iter().map(|b| !b).collect()
}

/// Parses a SMILES string from the supported subset into a heavy-atom graph.
pub fn parse_smiles(smiles: &str) -> Result<MolGraph, SmilesError> {
    let mut p = Parser {
        bytes: smiles.as_bytes(),
        atoms: Vec::new(),
        bonds: Vec::new(),
        bond_set: HashSet::new(),
        prev: None,
        pending_bond: None,
        branches: Vec::new(),
        rings: HashMap::new(),
    };
    p.run()?;
    let Parser {
        atoms, bonds: raw, ..
    } = p;
    let n = atoms.len();

    let mut orders = Vec::with_capacity(raw.len());
    for rb in &raw {
        let both_aromatic = atoms[rb.a].aromatic && atoms[rb.b].aromatic;
        let order = match rb.order {
            Some(BondOrder::Aromatic) if !both_aromatic => {
                return Err(malformed(
                    rb.pos,
                    "aromatic bond between non-aromatic atoms",
                ));
            }
            Some(o) => o,
            None if both_aromatic => BondOrder::Aromatic,
            None => BondOrder::Single,
        };
        orders.push(order);
    }
    let edges: Vec<(usize, usize)> = raw.iter().map(|rb| (rb.a, rb.b)).collect();
    let in_ring = ring_bonds(n, &edges);
    for (k, rb) in raw.iter().enumerate() {
        // An unwritten bond between aromatic atoms outside any ring joins two
        // aromatic systems and is single.
        if rb.order.is_none() && orders[k] == BondOrder::Aromatic && !in_ring[k] {
            orders[k] = BondOrder::Single;
        }
    }

    let mut degree = vec![0u32; n];
    let mut atom_ring = vec![false; n];
    let mut arom_count = vec![0u32; n];
    let mut other_sum = vec![0u32; n];
    for (k, &(a, b)) in edges.iter().enumerate() {
        for x in [a, b] {
            degree[x] += 1;
            atom_ring[x] |= in_ring[k];
            if orders[k] == BondOrder::Aromatic {
                arom_count[x] += 1;
            } else {
                other_sum[x] += orders[k].valence();
            }
        }
    }

    let atoms_out = atoms
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let implicit_hydrogens = match a.hcount {
                Some(h) => h,
                None => implicit_h(&a.element, a.aromatic, arom_count[i], other_sum[i]),
            };
            AtomRecord {
                element: a.element,
                degree: degree[i],
                formal_charge: a.charge,
                is_aromatic: a.aromatic,
                implicit_hydrogens,
                in_ring: atom_ring[i],
            }
        })
        .collect();
    let bonds_out = edges
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| BondRecord {
            endpoints: (a.min(b), a.max(b)),
            order: orders[k],
            in_ring: in_ring[k],
        })
        .collect();
    Ok(MolGraph {
        atoms: atoms_out,
        bonds: bonds_out,
        smiles: smiles.to_string(),
    })
}

/// Implicit hydrogens of an unbracketed atom from the valence table.
/// Aromatic atoms use their lowest valence and count one extra unit for the
/// delocalized bond when they carry two or more aromatic bonds.
fn implicit_h(element: &str, aromatic: bool, n_aromatic: u32, other: u32) -> u32 {
    let table = valences(element);
    if aromatic {
        let used = other + n_aromatic + u32::from(n_aromatic >= 2);
        return table.first().map_or(0, |&v| v.saturating_sub(used));
    }
    let used = other + n_aromatic;
    table.iter().find(|&&v| v >= used).map_or(0, |&v| v - used)
}

/// Removes stereo annotations (`/`, `\`, and `@` inside brackets) so that
/// stereo-bearing SMILES fall inside the supported subset. Brackets left as
/// `[CH]`-style atoms keep their explicit hydrogen count.
pub fn strip_stereo(smiles: &str) -> String {
    let mut out = String::with_capacity(smiles.len());
    let mut in_bracket = false;
    for ch in smiles.chars() {
        match ch {
            '[' => {
                in_bracket = true;
                out.push(ch);
            }
            ']' => {
                in_bracket = false;
                out.push(ch);
            }
            '/' | '\\' => {}
            '@' if in_bracket => {}
            _ => out.push(ch),
        }
    }
    out
}

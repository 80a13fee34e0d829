//! Deterministic node-description templates.
//!
//! A description is one randomly chosen lead sentence group carrying the
//! task attribute, followed by filler sentences until a sampled target
//! length inside the task's token range is reached.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{TaskError, TaskKind};
use crate::tokenizer::count_tokens;

pub type SlotValues = BTreeMap<&'static str, String>;

#[derive(Debug, Clone, Copy)]
pub struct DescriptionTemplate {
    pub task: TaskKind,
    /// Slot holding the attribute that must appear verbatim.
    pub key_slot: &'static str,
    pub variants: &'static [&'static str],
    pub fillers: &'static [&'static str],
    pub min_tokens: usize,
    pub max_tokens: usize,
}

const ATOM_VARIANTS: &[&str] = &[
    "The {name} atom has an atomic number of {number}, denoted as \"{symbol}\". {name} has an electronegativity value of approximately {en}. The covalent radius of a {name} atom is about {radius} picometers.",
    "This is a {name} atom, written with the symbol \"{symbol}\" and carrying atomic number {number}. Its electronegativity is close to {en}, and its covalent radius measures roughly {radius} picometers.",
    "Here we have {name}, element \"{symbol}\", whose atomic number is {number}. On the Pauling scale, {name} shows an electronegativity near {en}. A typical covalent radius for it is {radius} picometers.",
    "An atom of {name} (\"{symbol}\") sits in this molecule with atomic number {number}. The electronegativity of this {name} atom is about {en}, and its covalent radius is near {radius} picometers.",
    "Atomic number {number} identifies this atom as {name}, abbreviated \"{symbol}\". It has an electronegativity of roughly {en} and a covalent radius of approximately {radius} picometers.",
    "The element here is {name}, marked \"{symbol}\" in chemical notation, with {number} protons in its nucleus. Its electronegativity value is approximately {en}. The covalent radius is about {radius} picometers.",
    "We are looking at a {name} atom. Chemists denote it as \"{symbol}\", and its atomic number is {number}. This atom has an electronegativity of about {en} and a covalent radius of {radius} picometers.",
    "A {name} atom, symbol \"{symbol}\", atomic number {number}. Measured electronegativity: approximately {en}. Estimated covalent radius: about {radius} picometers, typical for {name} in small molecules.",
];

const ATOM_FILLERS: &[&str] = &[
    " It forms covalent bonds with nearby atoms.",
    " Its outer shell decides how it bonds.",
    " This atom is part of a larger molecule.",
    " Bond angles around it depend on its neighbors.",
    " Its electron configuration shapes its chemistry.",
    " It shares electrons with the atoms it touches.",
    " Such atoms are common in organic compounds.",
    " Its bonds help hold the molecule together.",
    " It is stable under normal conditions.",
    " Its position in the periodic table is well known.",
];

const PERSON_VARIANTS: &[&str] = &[
    "{Pron} is {person}, and {pron} is {age} years old.",
    "Meet {person}, who is {age} years of age.",
    "{Poss} name is {person}, and {pron} is {age} years old.",
    "{person} is a person aged {age}.",
    "This is {person}, {age} years old this year.",
    "At {age} years old, {person} enjoys a busy life.",
    "Say hello to {person}, who has reached the age of {age}.",
    "{person} just turned {age}, and {pron} is proud of it.",
];

const PERSON_FILLERS: &[&str] = &[
    " With {poss} colorful hair and unconventional fashion sense, {pron} stands out as a true original.",
    " {Poss} unassuming nature and humility create a relaxed atmosphere for everyone nearby.",
    " With {poss} adventurous spirit and love for the outdoors, {pron} is always up for exploring new places.",
    " {Pron} possesses an air of sophistication and grace, seen in {poss} timeless fashion.",
    " {Poss} contagious enthusiasm and energy inspire others to try new things.",
    " {Pron} loves cooking for friends on weekends.",
    " {Pron} reads a new book every month.",
    " Friends describe {obj} as loyal and kind.",
    " {Pron} spends quiet evenings painting landscapes.",
    " {Pron} volunteers at the local library.",
    " {Poss} laugh can be heard across the room.",
    " {Pron} plays the guitar in a small band.",
    " {Pron} has a soft spot for stray cats.",
    " Mornings usually start with a long walk.",
    " {Pron} keeps a tidy garden full of herbs.",
];

const WORMHOLE_VARIANTS: &[&str] = &[
    "It is wormhole {idx}, and it is located in galaxy {galaxy}. This wormhole is about {dist} light-years away from Earth and requires {cost} pounds of dark matter to activate.",
    "This is wormhole {idx}, found in the {galaxy} galaxy. It lies roughly {dist} light-years from Earth, and activating it takes {cost} pounds of dark matter.",
    "Located in galaxy {galaxy}, wormhole {idx} sits about {dist} light-years from Earth. It needs {cost} pounds of dark matter before it can be used.",
    "Astronomers catalogued wormhole {idx} in {galaxy}, about {dist} light-years away. Opening it consumes {cost} pounds of dark matter.",
    "The passage known as wormhole {idx} belongs to galaxy {galaxy}. Its distance from Earth is near {dist} light-years, and activation costs {cost} pounds of dark matter.",
    "In galaxy {galaxy} lies wormhole {idx}, roughly {dist} light-years from our planet. To activate it, travelers must spend {cost} pounds of dark matter.",
    "Our maps place wormhole {idx} inside {galaxy}, at a distance of about {dist} light-years. Each activation demands {cost} pounds of dark matter.",
    "Far from Earth, about {dist} light-years away, wormhole {idx} opens in galaxy {galaxy}. It requires {cost} pounds of dark matter to activate.",
];

const WORMHOLE_FILLERS: &[&str] = &[
    " Its entrance glows faintly.",
    " Ships pass through it often.",
    " It was mapped long ago.",
    " The route through it is stable.",
    " Pilots consider it safe.",
    " Its throat is narrow but steady.",
    " Few travelers have seen it.",
    " It hums with strange energy.",
];

const APPLICANT_VARIANTS: &[&str] = &[
    "{Pron} is {person}, and {pron} is {age} years old. {Pron} wants to find a job. {Pron} works as a {role}.",
    "Meet {person}, age {age}, a {role} looking for a new job.",
    "{person} is a {role} who is {age} years old and wants a new position.",
    "This applicant, {person}, is {age} years old and has trained as a {role}.",
    "At {age}, {person} has built a career as a {role} and is now looking for work.",
    "{Poss} name is {person}. {Pron} is {age} years old and is a {role} by profession.",
    "{person} ({age} years old) is an experienced {role} seeking employment.",
    "Say hello to {person}, a {age}-year-old {role} who wants to find a job.",
];

const JOB_VARIANTS: &[&str] = &[
    "This job is for a {role}. The average salary for a year is {salary} dollars, and it needs to work {hours} hours every week.",
    "We are hiring a {role}. The position pays {salary} dollars a year for {hours} hours of work per week.",
    "Open position: {role}. Yearly pay is about {salary} dollars with {hours} hours each week.",
    "A company needs a {role}, offering {salary} dollars per year and {hours} working hours a week.",
    "The role of {role} is available, paying {salary} dollars annually for {hours} hours weekly.",
    "Wanted: a {role} for {hours} hours every week, with an average yearly salary of {salary} dollars.",
    "This opening is for a {role}. It pays {salary} dollars a year and asks for {hours} hours per week.",
    "Join us as a {role}. The salary is {salary} dollars per year, and the job takes {hours} hours a week.",
];

const BIPARTITE_FILLERS: &[&str] = &[
    " We want applicants with related experience.",
    " The team is friendly.",
    " Training is provided.",
    " Remote work is possible.",
    " The office is downtown.",
    " Good communication skills matter.",
    " Flexible schedules are welcome.",
    " References are appreciated.",
];

pub const ATOM_TEMPLATE: DescriptionTemplate = DescriptionTemplate {
    task: TaskKind::SubstructureCounting,
    key_slot: "name",
    variants: ATOM_VARIANTS,
    fillers: ATOM_FILLERS,
    min_tokens: 52,
    max_tokens: 59,
};

pub const PERSON_TEMPLATE: DescriptionTemplate = DescriptionTemplate {
    task: TaskKind::MaximumTripletSum,
    key_slot: "age",
    variants: PERSON_VARIANTS,
    fillers: PERSON_FILLERS,
    min_tokens: 39,
    max_tokens: 82,
};

pub const WORMHOLE_TEMPLATE: DescriptionTemplate = DescriptionTemplate {
    task: TaskKind::ShortestPath,
    key_slot: "cost",
    variants: WORMHOLE_VARIANTS,
    fillers: WORMHOLE_FILLERS,
    min_tokens: 48,
    max_tokens: 58,
};

pub const APPLICANT_TEMPLATE: DescriptionTemplate = DescriptionTemplate {
    task: TaskKind::BipartiteMatching,
    key_slot: "role",
    variants: APPLICANT_VARIANTS,
    fillers: BIPARTITE_FILLERS,
    min_tokens: 34,
    max_tokens: 61,
};

pub const JOB_TEMPLATE: DescriptionTemplate = DescriptionTemplate {
    task: TaskKind::BipartiteMatching,
    key_slot: "role",
    variants: JOB_VARIANTS,
    fillers: BIPARTITE_FILLERS,
    min_tokens: 34,
    max_tokens: 61,
};

/// The template for a task; bipartite tasks distinguish applicants (left)
/// from jobs (right).
pub fn template_for(task: TaskKind, right_side: bool) -> &'static DescriptionTemplate {
    match task {
        TaskKind::SubstructureCounting => &ATOM_TEMPLATE,
        TaskKind::MaximumTripletSum => &PERSON_TEMPLATE,
        TaskKind::ShortestPath => &WORMHOLE_TEMPLATE,
        TaskKind::BipartiteMatching if right_side => &JOB_TEMPLATE,
        TaskKind::BipartiteMatching => &APPLICANT_TEMPLATE,
    }
}

fn fill(text: &str, values: &SlotValues) -> Result<String, TaskError> {
    let mut out = String::with_capacity(text.len() + 32);
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .ok_or_else(|| TaskError::MissingSlot(rest[open..].to_string()))?;
        let name = &rest[open + 1..close];
        let value = values
            .get(name)
            .ok_or_else(|| TaskError::MissingSlot(name.to_string()))?;
        out.push_str(value);
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl DescriptionTemplate {
    /// Slot names used by any variant or filler.
    pub fn slots(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = Vec::new();
        for text in self.variants.iter().chain(self.fillers) {
            let mut rest: &'static str = text;
            while let Some(open) = rest.find('{') {
                let close = open + rest[open..].find('}').expect("balanced template");
                let name = &rest[open + 1..close];
                if !names.contains(&name) {
                    names.push(name);
                }
                rest = &rest[close + 1..];
            }
        }
        names.sort_unstable();
        names
    }

    pub fn render<R: Rng + ?Sized>(&self, values: &SlotValues, rng: &mut R) -> Result<String, TaskError> {
        for slot in self.slots() {
            if !values.contains_key(slot) {
                return Err(TaskError::MissingSlot(slot.to_string()));
            }
        }
        let lead = self.variants[rng.random_range(0..self.variants.len())];
        let mut text = fill(lead, values)?;
        let mut len = count_tokens(&text);
        let target = rng.random_range(self.min_tokens..=self.max_tokens);
        let mut order: Vec<usize> = (0..self.fillers.len()).collect();
        order.shuffle(rng);
        for i in order {
            if len >= target {
                break;
            }
            let sentence = fill(self.fillers[i], values)?;
            let extra = count_tokens(&sentence);
            if len + extra <= self.max_tokens {
                text.push_str(&sentence);
                len += extra;
            }
        }
        if len < self.min_tokens || len > self.max_tokens {
            return Err(TaskError::DescriptionLength {
                got: len,
                min: self.min_tokens,
                max: self.max_tokens,
            });
        }
        Ok(text)
    }
}

/// Render a description for `task`, choosing the applicant or job template
/// for bipartite nodes.
pub fn render_description<R: Rng + ?Sized>(
    task: TaskKind,
    right_side: bool,
    values: &SlotValues,
    rng: &mut R,
) -> Result<String, TaskError> {
    template_for(task, right_side).render(values, rng)
}

//! Deterministic synthetic fact world for desk-scale experiments.
//!
//! A world is a set of (subject, relation, object) triples over a closed
//! vocabulary: every entity gets one true object per relation. A per-relation
//! half of the triples becomes counterfactual edit requests (with paraphrase
//! prompts and out-of-scope probes); the rest stay true and serve as the
//! candidate pool facts. The pre-training corpus realizes every true triple
//! as a base sentence plus two paraphrase sentences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{EditRequest, FactSentence, FactStoreError, NeighborhoodProbe, Result};

const FIRST_NAMES: &[&str] = &[
    "Alma", "Boris", "Carla", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Irene", "Jonas",
    "Kira", "Lionel", "Mara", "Nadia", "Oskar", "Petra", "Quentin", "Rosa", "Stefan", "Tamara",
    "Ulrich", "Vera", "Walter", "Xenia", "Yusuf", "Zelda", "Anton", "Bianca", "Cedric", "Dora",
    "Edgar", "Flora", "Gustav", "Hilda", "Ivan", "Jutta", "Karl", "Lena", "Marek", "Nora",
];

const SURNAMES: &[&str] = &[
    "Novak", "Fischer", "Rossi", "Tanaka", "Dubois", "Haber", "Lindgren", "Okafor", "Petrov",
    "Quinn", "Santos", "Toma", "Ueda", "Vance", "Weiss", "Xu", "Yilmaz", "Zoltan", "Adler",
    "Brandt",
];

struct RelationDef {
    id: &'static str,
    template: &'static str,
    paraphrase_templates: [&'static str; 2],
    objects: &'static [&'static str],
}

const RELATIONS: &[RelationDef] = &[
    RelationDef {
        id: "lives_in",
        template: "{} lives in",
        paraphrase_templates: ["{} resides in", "{} settled in"],
        objects: &[
            "Paris", "Tokyo", "Cairo", "Oslo", "Lima", "Dublin", "Madrid", "Prague", "Quito",
            "Athens", "Bergen", "Havana",
        ],
    },
    RelationDef {
        id: "speaks",
        template: "{} speaks",
        paraphrase_templates: ["{} talks in", "{} chats in"],
        objects: &[
            "French",
            "Japanese",
            "Arabic",
            "Norwegian",
            "Spanish",
            "Irish",
            "Czech",
            "Greek",
            "German",
            "Quechua",
            "Danish",
            "Polish",
        ],
    },
    RelationDef {
        id: "plays",
        template: "{} plays",
        paraphrase_templates: ["{} performs on", "{} practices"],
        objects: &[
            "violin", "piano", "drums", "flute", "guitar", "cello", "trumpet", "oboe", "banjo",
            "harp", "organ", "mandolin",
        ],
    },
    RelationDef {
        id: "studies",
        template: "{} studies",
        paraphrase_templates: ["{} researches", "{} teaches"],
        objects: &[
            "biology",
            "history",
            "physics",
            "algebra",
            "poetry",
            "botany",
            "geology",
            "astronomy",
            "chemistry",
            "logic",
            "ecology",
            "grammar",
        ],
    },
    RelationDef {
        id: "drinks",
        template: "{} drinks",
        paraphrase_templates: ["{} prefers", "{} sips"],
        objects: &[
            "coffee", "tea", "juice", "cocoa", "lemonade", "cider", "milk", "espresso", "matcha",
            "soda", "kefir", "mead",
        ],
    },
    RelationDef {
        id: "coaches",
        template: "{} coaches",
        paraphrase_templates: ["{} trains for", "{} mentors in"],
        objects: &[
            "chess", "rowing", "fencing", "archery", "skiing", "judo", "tennis", "boxing",
            "cycling", "climbing", "diving", "curling",
        ],
    },
    RelationDef {
        id: "collects",
        template: "{} collects",
        paraphrase_templates: ["{} gathers", "{} hoards"],
        objects: &[
            "stamps", "coins", "fossils", "maps", "beetles", "marbles", "posters", "shells",
            "comics", "medals", "puppets", "lanterns",
        ],
    },
    RelationDef {
        id: "admires",
        template: "{} admires",
        paraphrase_templates: ["{} praises", "{} respects"],
        objects: &[
            "Picasso", "Mozart", "Curie", "Darwin", "Tesla", "Austen", "Turing", "Kahlo", "Euler",
            "Noether", "Hopper", "Goodall",
        ],
    },
];

/// Parameters of a synthetic world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldParams {
    pub seed: u64,
    pub n_entities: usize,
    pub n_relations: usize,
    pub objects_per_relation: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrueTriple {
    subject: String,
    relation: usize,
    object: String,
    edited: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChosenRelation {
    catalog_index: usize,
    objects: Vec<String>,
}

/// A generated world: edits, pool facts, and the true-fact corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthWorld {
    pub params: WorldParams,
    pub edits: Vec<EditRequest>,
    pub pool_facts: Vec<FactSentence>,
    /// Sentences realizing every true triple (base + paraphrase forms),
    /// the pre-training corpus.
    pub corpus: Vec<String>,
    relations: Vec<ChosenRelation>,
    triples: Vec<TrueTriple>,
}

fn realize(template: &str, subject: &str) -> String {
    template.replacen("{}", subject, 1)
}

fn base_sentence(template: &str, subject: &str, object: &str) -> String {
    format!("{} {}.", realize(template, subject), object)
}

impl SynthWorld {
    pub fn generate(params: WorldParams) -> Result<SynthWorld> {
        let WorldParams {
            seed,
            n_entities,
            n_relations,
            objects_per_relation,
        } = params;
        if n_entities < 2 {
            return Err(FactStoreError::Config("need at least 2 entities".into()));
        }
        if objects_per_relation < 2 {
            return Err(FactStoreError::Config(
                "need at least 2 objects per relation so a counterfactual target exists".into(),
            ));
        }
        if n_relations == 0 || n_relations > RELATIONS.len() {
            return Err(FactStoreError::Config(format!(
                "n_relations must be between 1 and {}",
                RELATIONS.len()
            )));
        }
        let max_entities = FIRST_NAMES.len() + FIRST_NAMES.len() * SURNAMES.len();
        if n_entities > max_entities {
            return Err(FactStoreError::Config(format!(
                "at most {max_entities} distinct entities available"
            )));
        }
        if RELATIONS
            .iter()
            .any(|r| objects_per_relation > r.objects.len())
        {
            return Err(FactStoreError::Config(format!(
                "objects_per_relation is capped at {}",
                RELATIONS.iter().map(|r| r.objects.len()).min().unwrap()
            )));
        }
        // Every relation contributes ceil(n/2) edited and floor(n/2) unedited
        // entities; two probes per edit are drawn from the unedited side.
        if n_entities / 2 < 2 {
            return Err(FactStoreError::Config(
                "too few entities to leave 2 unedited probe facts per relation; \
                 use at least 4 entities"
                    .into(),
            ));
        }

        let mut rng = ChaCha12Rng::seed_from_u64(seed);

        let mut entity_candidates: Vec<String> =
            FIRST_NAMES.iter().map(|s| s.to_string()).collect();
        for first in FIRST_NAMES {
            for last in SURNAMES {
                entity_candidates.push(format!("{first} {last}"));
            }
        }
        entity_candidates.shuffle(&mut rng);
        let entities: Vec<String> = entity_candidates.into_iter().take(n_entities).collect();

        let mut relation_order: Vec<usize> = (0..RELATIONS.len()).collect();
        relation_order.shuffle(&mut rng);
        let mut relations = Vec::with_capacity(n_relations);
        for &catalog_index in relation_order.iter().take(n_relations) {
            let mut objects: Vec<String> = RELATIONS[catalog_index]
                .objects
                .iter()
                .map(|s| s.to_string())
                .collect();
            objects.shuffle(&mut rng);
            objects.truncate(objects_per_relation);
            relations.push(ChosenRelation {
                catalog_index,
                objects,
            });
        }

        // True assignments, then the per-relation edit/pool split.
        let mut triples = Vec::new();
        let mut edits = Vec::new();
        let mut pool_facts = Vec::new();
        for (rel_idx, rel) in relations.iter().enumerate() {
            let def = &RELATIONS[rel.catalog_index];
            let mut entity_order: Vec<usize> = (0..entities.len()).collect();
            entity_order.shuffle(&mut rng);
            let n_edit = entities.len().div_ceil(2);

            let mut rel_triples: Vec<TrueTriple> = entity_order
                .iter()
                .enumerate()
                .map(|(slot, &e)| TrueTriple {
                    subject: entities[e].clone(),
                    relation: rel_idx,
                    object: rel.objects[rng.gen_range(0..rel.objects.len())].clone(),
                    edited: slot < n_edit,
                })
                .collect();

            let unedited: Vec<(String, String)> = rel_triples
                .iter()
                .filter(|t| !t.edited)
                .map(|t| (t.subject.clone(), t.object.clone()))
                .collect();

            for t in &rel_triples {
                if t.edited {
                    // The new object must differ from the true one and leave
                    // at least two unedited facts with a different object,
                    // so that probes stay decisive (no forced ties).
                    let valid_targets: Vec<&String> = rel
                        .objects
                        .iter()
                        .filter(|o| {
                            *o != &t.object
                                && unedited.iter().filter(|(_, obj)| &obj != o).count() >= 2
                        })
                        .collect();
                    if valid_targets.is_empty() {
                        return Err(FactStoreError::Config(format!(
                            "relation {}: no counterfactual object leaves two \
                             unedited probe facts; use more entities or objects",
                            def.id
                        )));
                    }
                    let target_new = valid_targets[rng.gen_range(0..valid_targets.len())].clone();
                    let candidates: Vec<&(String, String)> = unedited
                        .iter()
                        .filter(|(_, obj)| obj != &target_new)
                        .collect();
                    let probes = rand::seq::index::sample(&mut rng, candidates.len(), 2)
                        .into_iter()
                        .map(|i| NeighborhoodProbe {
                            prompt: realize(def.template, &candidates[i].0),
                            expected: candidates[i].1.clone(),
                        })
                        .collect();
                    edits.push(EditRequest {
                        case_id: format!("case-{:03}", edits.len()),
                        subject: t.subject.clone(),
                        prompt_template: def.template.to_string(),
                        relation_id: def.id.to_string(),
                        target_new,
                        target_true: t.object.clone(),
                        paraphrases: def
                            .paraphrase_templates
                            .iter()
                            .map(|p| realize(p, &t.subject))
                            .collect(),
                        neighborhood_prompts: probes,
                    });
                } else {
                    pool_facts.push(FactSentence::new(base_sentence(
                        def.template,
                        &t.subject,
                        &t.object,
                    )));
                }
            }
            triples.append(&mut rel_triples);
        }

        let mut corpus = Vec::new();
        for t in &triples {
            let def = &RELATIONS[relations[t.relation].catalog_index];
            corpus.push(base_sentence(def.template, &t.subject, &t.object));
            for p in &def.paraphrase_templates {
                corpus.push(base_sentence(p, &t.subject, &t.object));
            }
        }

        let world = SynthWorld {
            params,
            edits,
            pool_facts,
            corpus,
            relations,
            triples,
        };
        for e in &world.edits {
            e.validate()?;
        }
        Ok(world)
    }

    /// Reference texts per case: base sentences of unedited triples that
    /// share the edit's relation and carry its new object as their true
    /// object. Cases with no such neighbors get no references.
    pub fn references(&self) -> BTreeMap<String, Vec<String>> {
        let mut out = BTreeMap::new();
        for edit in &self.edits {
            let refs: Vec<String> = self
                .triples
                .iter()
                .filter(|t| {
                    !t.edited
                        && RELATIONS[self.relations[t.relation].catalog_index].id
                            == edit.relation_id
                        && t.object == edit.target_new
                })
                .map(|t| {
                    let def = &RELATIONS[self.relations[t.relation].catalog_index];
                    base_sentence(def.template, &t.subject, &t.object)
                })
                .collect();
            if !refs.is_empty() {
                out.insert(edit.case_id.clone(), refs);
            }
        }
        out
    }
}

/// Generates the edit requests and the disjoint true-fact pool of a
/// synthetic world. Deterministic in `seed`.
pub fn synth_world(
    seed: u64,
    n_entities: usize,
    n_relations: usize,
    objects_per_relation: usize,
) -> Result<(Vec<EditRequest>, Vec<FactSentence>)> {
    let world = SynthWorld::generate(WorldParams {
        seed,
        n_entities,
        n_relations,
        objects_per_relation,
    })?;
    Ok((world.edits, world.pool_facts))
}

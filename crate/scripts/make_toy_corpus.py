#!/usr/bin/env python3
"""Generate the bundled Topical-Chat-style toy corpus.

Writes conversations.json and reading_sets.json in the Topical-Chat layout:
conversations keyed by id with a `content` list of {message, agent}, and
reading sets keyed by the same ids with agent_1 / agent_2 sections holding
{entity, fun_facts}. Output is deterministic for a given --seed.
"""

import argparse
import json
import random
from pathlib import Path

FACTS = {
    "cats": [
        "cats sleep for around sixteen hours a day",
        "a group of cats is called a clowder",
        "cats can rotate their ears one hundred eighty degrees",
        "the oldest known pet cat lived nine thousand years ago in cyprus",
        "cats cannot taste sweetness",
        "a cat has thirty two muscles in each ear",
    ],
    "paris": [
        "the eiffel tower grows about six inches taller in summer",
        "paris has only one stop sign in the whole city",
        "the louvre was originally built as a fortress",
        "there is a replica of the statue of liberty on an island in paris",
        "paris was once called lutetia by the romans",
        "the paris metro has over three hundred stations",
    ],
    "jazz": [
        "louis armstrong was nicknamed satchmo",
        "the first jazz record was released in nineteen seventeen",
        "miles davis recorded kind of blue in just two sessions",
        "jazz musicians call a short repeated phrase a riff",
        "new orleans is widely called the birthplace of jazz",
        "duke ellington wrote more than a thousand compositions",
    ],
    "the moon": [
        "the moon is drifting away from earth by about four centimeters a year",
        "footprints left on the moon could last for millions of years",
        "the moon has moonquakes just like earth has earthquakes",
        "only twelve people have ever walked on the moon",
        "the same side of the moon always faces earth",
        "the moon has no atmosphere to protect it from meteors",
    ],
    "chess": [
        "the longest possible chess game is nearly six thousand moves",
        "the word checkmate comes from the persian phrase shah mat",
        "the folding chess board was invented by a priest",
        "a computer first beat a world chess champion in nineteen ninety seven",
        "there are more possible chess games than atoms in the universe",
        "the queen was once the weakest piece on the board",
    ],
    "coffee": [
        "coffee beans are actually the seeds of a fruit",
        "finland drinks more coffee per person than any other country",
        "legend says goats discovered coffee in ethiopia",
        "espresso has less caffeine than a regular cup of drip coffee",
        "coffee was once banned in mecca",
        "brazil has been the largest coffee producer for over a century",
    ],
    "sharks": [
        "sharks existed before trees did",
        "a shark can smell a drop of blood from far away",
        "some sharks must keep swimming to breathe",
        "the whale shark is the largest fish in the ocean",
        "sharks have no bones in their bodies",
        "a shark may grow thousands of teeth in its lifetime",
    ],
    "volcanoes": [
        "there are more volcanoes under the sea than on land",
        "the largest volcano in the solar system is on mars",
        "lightning often strikes inside volcanic ash clouds",
        "iceland gets much of its heating from volcanic activity",
        "a volcano in mexico grew out of a farmer's cornfield",
        "volcanic soil is some of the most fertile on earth",
    ],
    "the olympics": [
        "olympic gold medals are mostly made of silver",
        "art competitions were once part of the olympics",
        "the olympic rings represent five continents",
        "tug of war used to be an olympic sport",
        "the first modern olympics were held in athens",
        "the olympic torch relay began in nineteen thirty six",
    ],
    "honey": [
        "honey never spoils if it is sealed",
        "bees visit about two million flowers to make a pound of honey",
        "edible honey was found in ancient egyptian tombs",
        "a single bee makes only a teaspoon of honey in its life",
        "honey can be used to treat small wounds",
        "the color of honey depends on the flowers the bees visit",
    ],
    "octopuses": [
        "octopuses have three hearts",
        "an octopus can taste with its arms",
        "octopuses have blue blood",
        "an octopus can squeeze through any gap larger than its beak",
        "some octopuses use coconut shells as shelters",
        "octopuses can change color in a fraction of a second",
    ],
    "bicycles": [
        "there are twice as many bicycles as cars in the world",
        "the first bicycles had no pedals",
        "amsterdam has more bikes than people",
        "the tour de france was started to sell newspapers",
        "bicycle tires were once filled with solid rubber",
        "a bicycle is the most energy efficient way to travel",
    ],
}

OPENERS = [
    "hi do you know much about {e}",
    "hello have you ever thought about {e}",
    "hey what do you think of {e}",
    "hi there are you a fan of {e}",
]

REPLIES = [
    "a little bit i find {e} interesting",
    "not really but i am curious about {e}",
    "yes i love talking about {e}",
    "sort of i read about {e} sometimes",
]

QUOTES = [
    "did you know that {f}",
    "i read that {f}",
    "apparently {f}",
    "fun fact {f}",
    "i learned that {f} which is wild",
    "so {f} did you know that",
]

REACTIONS = [
    "wow i had no idea",
    "that is really surprising",
    "haha that is amazing",
    "really i never heard that before",
    "that makes sense actually",
    "no way that is so cool",
]

FOLLOW_UPS = [
    "what else do you know about {e}",
    "have you seen anything like that yourself",
    "do you think that is true",
    "where did you read that",
    "that reminds me of something else",
    "i wonder why that is",
]

SMALL_TALK = [
    "i have to say this is a fun chat",
    "i agree with you there",
    "what about you what do you like",
    "i think so too",
    "that is a good point",
]


def conversation(rng, conv_id, entities):
    facts_by_agent = {}
    for agent, entity in zip(["agent_1", "agent_2"], entities):
        chosen = rng.sample(FACTS[entity], 3)
        facts_by_agent[agent] = {"entity": entity, "facts": chosen}

    turns = []
    agents = ["agent_1", "agent_2"]
    speaker = 0
    e0 = entities[0]
    turns.append((agents[speaker], rng.choice(OPENERS).format(e=e0)))
    speaker ^= 1
    turns.append((agents[speaker], rng.choice(REPLIES).format(e=e0)))
    speaker ^= 1

    pending = [(a, f) for a in agents for f in facts_by_agent[a]["facts"]]
    rng.shuffle(pending)
    for agent, fact in pending:
        if agents[speaker] != agent:
            turns.append((agents[speaker], rng.choice(SMALL_TALK)))
            speaker ^= 1
        turns.append((agent, rng.choice(QUOTES).format(f=fact)))
        speaker ^= 1
        reaction = rng.choice(REACTIONS)
        if rng.random() < 0.5:
            reaction += " " + rng.choice(FOLLOW_UPS).format(e=facts_by_agent[agent]["entity"])
        turns.append((agents[speaker], reaction))
        speaker ^= 1

    content = [{"message": m, "agent": a, "sentiment": "Neutral"} for a, m in turns]
    reading = {}
    for agent in agents:
        block = facts_by_agent[agent]
        # Reading sets also list distractor facts that are never quoted.
        distractors = [f for f in FACTS[block["entity"]] if f not in block["facts"]]
        reading[agent] = {
            "FS1": {"entity": block["entity"], "fun_facts": block["facts"] + rng.sample(distractors, 1)},
        }
    reading["config"] = "A"
    return {"article_url": "", "config": "A", "content": content}, reading


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("crates/cli/fixtures/toy"))
    parser.add_argument("--conversations", type=int, default=120)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    names = sorted(FACTS)
    conversations, reading_sets = {}, {}
    for i in range(args.conversations):
        conv_id = f"t{i:04d}"
        entities = rng.sample(names, 2)
        conv, reading = conversation(rng, conv_id, entities)
        conversations[conv_id] = conv
        reading_sets[conv_id] = reading

    args.out.mkdir(parents=True, exist_ok=True)
    for name, data in [("conversations.json", conversations), ("reading_sets.json", reading_sets)]:
        (args.out / name).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(conversations)} conversations to {args.out}")


if __name__ == "__main__":
    main()

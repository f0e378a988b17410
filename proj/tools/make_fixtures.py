#!/usr/bin/env python3
"""Generate the synthetic toy corpora bundled under data/.

Outputs (all deterministic for a given --seed):
  dialogs.jsonl          restaurant/attraction dialogs, {"turns": [...]}
  reviews.tsv            id<TAB>domain<TAB>text review snippets
  lm_corpus.jsonl        language-model training sequences as segment lists
  fixture_dialogs.jsonl  held-out histories ending in a user turn
  stopwords.txt, blocklist.txt, contradiction_groups.txt
"""

import argparse
import json
import random
from pathlib import Path

AREAS = ["centre", "north", "south", "east", "west"]
PRICES = ["cheap", "moderate", "expensive"]
DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
PEOPLE = ["two", "three", "four", "five", "six", "seven", "eight"]
TIMES = ["noon", "six pm", "seven pm", "eight pm", "half past six", "half past seven"]
FEES = ["free", "two pounds", "five pounds", "seven pounds", "ten pounds"]
STREETS = ["regent street", "mill road", "king street", "trumpington street", "hills road",
           "bridge street", "castle street", "newmarket road", "market square", "jesus lane"]
MEALS = ["lunch", "dinner", "a quick bite", "a date night", "a family meal"]
ADJ = ["delicious", "amazing", "tasty", "fresh", "average", "excellent", "wonderful",
       "disappointing", "superb", "decent", "lovely", "great"]
STAFF = ["friendly", "helpful", "slow", "polite", "attentive", "rude"]
AMBIENCE = ["terrace", "garden", "view of the river", "fireplace", "courtyard", "bar"]

DISHES = {
    "indian": ["curry", "naan", "biryani", "tandoori chicken", "samosas"],
    "chinese": ["dumplings", "noodles", "fried rice", "roast duck"],
    "italian": ["pizza", "pasta", "risotto", "tiramisu"],
    "thai": ["green curry", "pad thai", "spring rolls"],
    "british": ["roast beef", "fish and chips", "pies"],
    "french": ["steak", "crepes", "onion soup"],
    "mexican": ["tacos", "burritos", "nachos"],
    "japanese": ["sushi", "ramen", "tempura"],
    "spanish": ["tapas", "paella"],
    "turkish": ["kebabs", "meze"],
    "lebanese": ["falafel", "hummus"],
    "korean": ["bibimbap", "fried chicken"],
}

RESTAURANTS = [
    ("curry garden", "indian"), ("taj tandoori", "indian"), ("meghna", "indian"),
    ("kohinoor", "indian"), ("golden wok", "chinese"), ("rice house", "chinese"),
    ("lucky star", "chinese"), ("la margherita", "italian"), ("pizza express", "italian"),
    ("pasta palace", "italian"), ("bangkok city", "thai"), ("sala thong", "thai"),
    ("the chop house", "british"), ("the eagle", "british"), ("cote", "french"),
    ("la maison", "french"), ("el taco", "mexican"), ("dojo noodle bar", "japanese"),
    ("sakura", "japanese"), ("la tasca", "spanish"), ("anatolia", "turkish"),
    ("the nirala", "indian"), ("cedar house", "lebanese"), ("little seoul", "korean"),
]

ATTRACTIONS = [
    ("kings college", "college", ["chapel", "choir", "lawns"]),
    ("queens college", "college", ["wooden bridge", "old library"]),
    ("fitzwilliam museum", "museum", ["paintings", "egyptian collection"]),
    ("whipple museum", "museum", ["old telescopes", "scientific instruments"]),
    ("botanic gardens", "park", ["glasshouses", "rare plants", "lake"]),
    ("jesus green", "park", ["outdoor pool", "tennis courts"]),
    ("the junction", "theatre", ["live music", "comedy nights"]),
    ("adc theatre", "theatre", ["student plays", "musicals"]),
    ("kettles yard", "gallery", ["modern art", "quiet house"]),
    ("castle galleries", "gallery", ["prints", "sculptures"]),
    ("great saint marys church", "church", ["tower", "view over the city"]),
    ("scudamores punting", "boat", ["punting tours", "river trips"]),
    ("vue cinema", "cinema", ["new films", "big screens"]),
    ("ballare", "nightclub", ["dancing", "late nights"]),
    ("parkside pools", "pool", ["swimming lanes", "water slides"]),
]

STOPWORDS = """a an the and or but if of at by for with about against between into through
during before after above below to from up down in out on off over under again further then
once here there when where why how all any both each few more most other some such no nor not
only own same so than too very s t can will just don't should now i me my myself we our ours
ourselves you your yours yourself yourselves he him his himself she her hers herself it its
itself they them their theirs themselves what which who whom this that these those am is are
was were be been being have has had having do does did doing would could please yes okay ok
thanks thank also would like want need looking something anything could sounds good great""".split()

BLOCKLIST = ["stupid", "idiot", "hate", "disgusting", "awful"]

CONTRADICTION_GROUPS = [PRICES, AREAS, sorted(DISHES), sorted({t for _, t, _ in ATTRACTIONS}),
                        PEOPLE, DAYS]


def make_world(rng):
    restaurants = []
    for name, food in RESTAURANTS:
        restaurants.append({
            "name": name, "food": food, "area": rng.choice(AREAS), "price": rng.choice(PRICES),
            "street": rng.choice(STREETS), "dish": rng.choice(DISHES[food]),
            "ambience": rng.choice(AMBIENCE),
        })
    attractions = []
    for name, kind, features in ATTRACTIONS:
        attractions.append({
            "name": name, "type": kind, "area": rng.choice(AREAS), "fee": rng.choice(FEES),
            "street": rng.choice(STREETS), "features": features,
        })
    return restaurants, attractions


def restaurant_dialog(rng, r, long_form):
    dish = rng.choice(DISHES[r["food"]])
    u1 = rng.choice([
        f"i want a {r['price']} {r['food']} restaurant in the {r['area']}",
        f"i am looking for a {r['price']} restaurant that serves {r['food']} food",
        f"can you find me a {r['food']} restaurant in the {r['area']} of town",
        f"i would like to eat {r['food']} food in the {r['area']}",
        f"i need a place to eat in the {r['area']} , something {r['price']}",
    ])
    s1 = rng.choice([
        f"{r['name']} is a {r['price']} {r['food']} restaurant in the {r['area']} . would you like to book a table ?",
        f"i recommend {r['name']} . it serves {r['food']} food and is in the {r['price']} price range .",
        f"{r['name']} serves great {dish} and is located in the {r['area']} .",
    ])
    n, time, day = rng.choice(PEOPLE), rng.choice(TIMES), rng.choice(DAYS)
    u2, s2 = rng.choice([
        (f"yes please book a table for {n} people at {time}",
         f"i have booked a table for {n} people at {time} . enjoy your meal !"),
        ("what is the address ?", f"the address is {r['street']} in the {r['area']} ."),
        (f"does it serve {dish} ?", f"yes , {r['name']} is famous for its {dish} ."),
        ("that sounds good . what time do they open ?", f"{r['name']} opens at {time} every day ."),
    ])
    turns = [("user", u1), ("system", s1), ("user", u2), ("system", s2)]
    if long_form:
        turns += [("user", f"can i book it for {day} instead ?"),
                  ("system", f"sure , your table at {r['name']} is booked for {day} .")]
    return turns


def attraction_dialog(rng, a, long_form):
    feature = rng.choice(a["features"])
    u1 = rng.choice([
        f"i am looking for a {a['type']} to visit in the {a['area']}",
        f"can you recommend a {a['type']} in town ?",
        f"is there a {a['type']} in the {a['area']} of town ?",
        f"what is there to do in the {a['area']} ?",
    ])
    s1 = rng.choice([
        f"{a['name']} is a lovely {a['type']} in the {a['area']} . it is famous for its {feature} .",
        f"you could visit {a['name']} . the entrance fee is {a['fee']} .",
        f"i suggest {a['name']} in the {a['area']} . visitors love the {feature} .",
    ])
    u2, s2 = rng.choice([
        ("what is the entrance fee ?", f"the entrance fee is {a['fee']} ."),
        ("where is it located ?", f"it is on {a['street']} in the {a['area']} ."),
        ("what can i see there ?", f"you can enjoy the {feature} at {a['name']} ."),
    ])
    turns = [("user", u1), ("system", s1), ("user", u2), ("system", s2)]
    if long_form:
        day = rng.choice(DAYS)
        turns += [("user", f"is it open on {day} ?"),
                  ("system", f"yes , {a['name']} is open on {day} .")]
    return turns


def restaurant_reviews(rng, r):
    dish = rng.choice(DISHES[r["food"]])
    adj, adj2 = rng.choice(ADJ), rng.choice(ADJ)
    name = r["name"]
    return rng.choice([
        f"{name} is famous for its {dish} and {rng.choice(STAFF)} service",
        f"the popular opinion about {name} is that the {dish} is {adj}",
        f"here is what i know about {name} : it is a {r['price']} {r['food']} place in the {r['area']}",
        f"my friend says that {name} is {adj} for {rng.choice(MEALS)}",
        f"i think {name} is {adj} . the {dish} was {adj2} and the staff were {rng.choice(STAFF)}",
        f"we had dinner at {name} last {rng.choice(DAYS)} . the {dish} was {adj}",
        f"the {r['food']} food at {name} is {adj} and the prices are {r['price']}",
        f"today i learned that {name} makes its own {dish}",
        f"i read on the internet that {name} has a lovely {r['ambience']}",
        f"here are some reviews about {name} : {adj} {dish} , {rng.choice(STAFF)} staff",
        f"{r['price']} {r['food']} restaurants in the {r['area']} like {name} serve {adj} {dish}",
    ])


def attraction_reviews(rng, a):
    feature = rng.choice(a["features"])
    name = a["name"]
    return rng.choice([
        f"{name} is famous for its {feature}",
        f"the popular opinion about {name} is that it is {rng.choice(ADJ)} for families",
        f"we visited {name} last {rng.choice(DAYS)} and loved the {feature}",
        f"here is some information about {name} : it is a {a['type']} in the {a['area']} and entry is {a['fee']}",
        f"my friend says that the {feature} at {name} is {rng.choice(ADJ)}",
        f"i think {name} is the best {a['type']} in the {a['area']}",
        f"today i learned that {name} has {feature}",
    ])


def blocked_review(rng, r):
    return rng.choice([
        f"the waiter at {r['name']} was stupid and {rng.choice(STAFF)}",
        f"i hate the {rng.choice(DISHES[r['food']])} at {r['name']}",
        f"the toilets at {r['name']} were disgusting",
    ])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=20211)
    ap.add_argument("--dialogs", type=int, default=250)
    ap.add_argument("--reviews", type=int, default=1000)
    ap.add_argument("--fixtures", type=int, default=50)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    restaurants, attractions = make_world(rng)

    def sample_dialog(r):
        long_form = r.random() < 0.2
        if r.random() < 0.6:
            ent = r.choice(restaurants)
            return ent["name"], restaurant_dialog(r, ent, long_form)
        ent = r.choice(attractions)
        return ent["name"], attraction_dialog(r, ent, long_form)

    dialogs = [sample_dialog(rng) for _ in range(args.dialogs)]

    reviews = []
    for i in range(args.reviews):
        roll = rng.random()
        if roll < 0.02:
            ent = rng.choice(restaurants)
            reviews.append((f"rev{i:04d}", "restaurant", ent["name"], blocked_review(rng, ent)))
        elif roll < 0.65:
            ent = rng.choice(restaurants)
            reviews.append((f"rev{i:04d}", "restaurant", ent["name"], restaurant_reviews(rng, ent)))
        else:
            ent = rng.choice(attractions)
            reviews.append((f"rev{i:04d}", "attraction", ent["name"], attraction_reviews(rng, ent)))

    with open(out / "dialogs.jsonl", "w") as f:
        for _, turns in dialogs:
            f.write(json.dumps({"turns": [{"speaker": s, "text": t} for s, t in turns]}) + "\n")

    with open(out / "reviews.tsv", "w") as f:
        for rid, domain, _, text in reviews:
            f.write(f"{rid}\t{domain}\t{text}\n")

    by_entity = {}
    for _, _, ent, text in reviews:
        by_entity.setdefault(ent, []).append(text)

    # Plain dialogs, plain reviews, review-grounded dialogs, and same-entity
    # review pairs so that PMI between snippets and histories is informative.
    # Knowledge that restates a turn, and knowledge followed by knowledge,
    # teach the model that a snippet raises the odds of what it says.
    seqs = []
    for ent, turns in dialogs:
        seqs.append([{"kind": s, "text": t} for s, t in turns])
        if ent in by_entity and rng.random() < 0.7:
            k = rng.choice(by_entity[ent])
            seqs.append([{"kind": "knowledge", "text": k}] + [{"kind": s, "text": t} for s, t in turns])
        if rng.random() < 0.5:
            cut = rng.randrange(1, len(turns) + 1)
            k = " ".join(t for _, t in turns[:cut])
            seqs.append([{"kind": "knowledge", "text": k}] + [{"kind": s, "text": t} for s, t in turns[:cut]])
    for _, _, ent, text in reviews:
        seqs.append([{"kind": "text", "text": text}])
        if rng.random() < 0.3 and len(by_entity[ent]) > 1:
            other = rng.choice(by_entity[ent])
            seqs.append([{"kind": "knowledge", "text": other}, {"kind": "text", "text": text}])
        roll = rng.random()
        if roll < 0.15:
            seqs.append([{"kind": "knowledge", "text": text}, {"kind": "knowledge", "text": text}])
        elif roll < 0.35:
            other = rng.choice(by_entity[ent])
            seqs.append([{"kind": "knowledge", "text": other}, {"kind": "knowledge", "text": text}])
    rng.shuffle(seqs)
    with open(out / "lm_corpus.jsonl", "w") as f:
        for s in seqs:
            f.write(json.dumps({"segments": s}) + "\n")

    frng = random.Random(args.seed + 1)
    with open(out / "fixture_dialogs.jsonl", "w") as f:
        for i in range(args.fixtures):
            _, turns = sample_dialog(frng)
            cut = 1 if i % 2 == 0 else 3
            f.write(json.dumps({"turns": [{"speaker": s, "text": t} for s, t in turns[:cut]]}) + "\n")

    (out / "stopwords.txt").write_text("\n".join(dict.fromkeys(STOPWORDS)) + "\n")
    (out / "blocklist.txt").write_text("\n".join(BLOCKLIST) + "\n")
    with open(out / "contradiction_groups.txt", "w") as f:
        for group in CONTRADICTION_GROUPS:
            f.write(" ".join(w for w in group if " " not in w) + "\n")


if __name__ == "__main__":
    main()

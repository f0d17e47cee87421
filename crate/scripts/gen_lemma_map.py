#!/usr/bin/env python3
"""Generate resources/lemma_map.tsv from a base lexicon.

Applies forward English inflection rules (noun plurals, verb forms,
adjective comparatives) to a curated base lexicon and adds a table of
irregular forms. Forward generation from known base words is reliable,
unlike inverse stemming, and produces a deterministic committed table.

Every emitted target lemma maps to itself under the table (closure), so
the preprocessing pipeline is idempotent.

Usage: python3 scripts/gen_lemma_map.py > resources/lemma_map.tsv
"""

import sys

VOWELS = set("aeiou")

# Base nouns. Entries flagged with "*" double the final consonant before
# a vowel suffix (not used for plain plurals, kept for symmetry).
NOUNS = """
animal answer apple area atom bacterium ball balloon band bank bar base
battery beach bear bee beetle bird blood boat body bone book bottle branch
breeze brick bridge bubble bud bug building butterfly cactus camel car
carbon cell chain chair characteristic chemical chicken circuit city class
climate cloud coal coast color community compound condition consumer
container continent copper crab crop crystal current cycle day decomposer
deer degree desert diagram dinosaur direction disease distance dog drop
droplet eagle ear earthquake echo ecosystem egg electron element energy
environment enzyme example experiment eye fact factor farm farmer feather
field fire fish flame flood floor flower food force forest form fossil fox
friction frog fruit fuel function fungus galaxy gas gene girl glacier glass
goat granite grass gravity group habitat hand hawk heart heat herbivore
hill hole horse hour human hurricane ice insect investigation iron island
kilogram kind kingdom lake larva lava layer leaf lemur lens letter light
lightning limestone line lion liquid liter lizard machine magnet mammal
mass material matter meal measurement member metal meter method mineral
minute mixture model molecule monkey month moon motion mountain mouse
muscle nest newton night nitrogen nucleus number nutrient object observation
ocean offspring oil orbit organ organism owl oxygen paper parent part
particle pattern pebble person phase place planet plant plate pond
population position pot predator pressure prey process producer product
property protein puddle pupa quantity rabbit rain rainbow rate ray region
resource result river road rock root rope salt sand scale school scientist
sea season sediment seed sense shadow shape shark sheet shell ship shore
signal size skin sky snake snow soil solid solution sound source space
species speed spring squirrel star state stem step stone storm stream
street structure student substance summer sun sunlight surface system
table tadpole tail telescope temperature thermometer thing tide time tissue
tool tooth top trait tree turtle unit valley vapor variable vibration
virus volcano volume wave weather week whale wheel wind wing winter wire
wolf wood word worm year zone
"""

# Base verbs. "*" marks final-consonant doubling (stop -> stopped).
VERBS = """
absorb act adapt add affect allow appear attract balance become begin
behave boil bounce break breathe burn carry cause change circulate
classify collect collide compare compete complete condense conduct connect
conserve consume contain contract control cool create cross cycle decay
decompose decrease depend describe destroy determine develop die differ
digest dissolve divide drag drift drink drip* drop* dry eat emit erode
erupt evaporate exert exist expand explain fall feed fill filter float
flow fly fold follow form freeze gain generate germinate grow hatch heat
help hibernate hold hunt increase infer inherit interact keep land learn
live locate look lower measure melt migrate mix move need observe obtain
occur orbit oxidize pass perform plan* plant play point pollinate predict
press produce protect provide pull push radiate rain reach receive record
recycle reduce reflect refract release remain remove repel reproduce
require respond rest result rise roll rotate rub* run scatter see seem
separate settle shine show shrink sink slide slow soak spin* spread stay
stop* store stretch strike support survive transfer transform transmit
transport trap* travel turn use vary vibrate warm wash weather wilt work
"""

# Short adjectives that take -er/-est. "*" marks doubling (hot -> hotter).
ADJECTIVES = """
big* bright clean clear close cold cool damp dark deep dense dim* dry dull
fast few flat* great hard heavy high hot* large light long loose loud low
near new old quick rough shallow sharp short slow small smooth soft steep
sticky strong sweet tall thick thin* tight warm weak wet* wide young
"""

# Irregular surface -> lemma pairs (plurals, verb forms, and a few Latin
# and Greek scientific plurals common in elementary science text).
IRREGULARS = """
ate eat
eaten eat
bacteria bacterium
became become
began begin
begun begin
bred breed
broke break
broken break
brought bring
built build
came come
caught catch
children child
chose choose
chosen choose
criteria criterion
data datum
did do
done do
drank drink
drunk drink
fed feed
feet foot
fell fall
fallen fall
felt feel
flew fly
flown fly
found find
froze freeze
frozen freeze
fungi fungus
gave give
given give
geese goose
genera genus
grew grow
grown grow
had have
has have
held hold
hid hide
hidden hide
kept keep
knew know
known know
larvae larva
leaves leaf
left leave
lives life
lice louse
lost lose
made make
meant mean
men man
mice mouse
nuclei nucleus
people person
phenomena phenomenon
pupae pupa
radii radius
ran run
rose rise
risen rise
said say
sank sink
sunk sink
saw see
seen see
sent send
sheep sheep
shone shine
shrank shrink
shrunk shrink
slid slide
sought seek
species species
sped speed
spent spend
spun spin
stood stand
struck strike
stuck stick
swam swim
swum swim
taught teach
teeth tooth
thought think
threw throw
thrown throw
told tell
took take
taken take
underwent undergo
went go
wolves wolf
women woman
wore wear
worn wear
wove weave
woven weave
"""


def words(block):
    out = []
    for tok in block.split():
        doubling = tok.endswith("*")
        out.append((tok.rstrip("*"), doubling))
    return out


def plural(w):
    if w.endswith(("s", "x", "z", "ch", "sh")):
        return w + "es"
    if len(w) > 2 and w.endswith("y") and w[-2] not in VOWELS:
        return w[:-1] + "ies"
    return w + "s"


def verb_forms(w, doubling):
    stem = w + w[-1] if doubling else w
    third = plural(w)
    if w.endswith("e"):
        past, gerund = w + "d", w[:-1] + "ing"
    elif len(w) > 2 and w.endswith("y") and w[-2] not in VOWELS:
        past, gerund = w[:-1] + "ied", w + "ing"
    else:
        past, gerund = stem + "ed", stem + "ing"
    return [third, past, gerund]


def adjective_forms(w, doubling):
    stem = w + w[-1] if doubling else w
    if w.endswith("e"):
        return [w + "r", w + "st"]
    if len(w) > 2 and w.endswith("y") and w[-2] not in VOWELS:
        return [w[:-1] + "ier", w[:-1] + "iest"]
    return [stem + "er", stem + "est"]


def main():
    pairs = {}

    def put(surface, lemma):
        if surface == lemma or not surface.isalpha():
            return
        prev = pairs.get(surface)
        if prev is not None and prev != lemma:
            # First writer wins; irregulars are inserted first.
            return
        pairs[surface] = lemma

    for line in IRREGULARS.strip().splitlines():
        surface, lemma = line.split()
        put(surface, lemma)
    for w, d in words(NOUNS):
        put(plural(w), w)
    for w, d in words(VERBS):
        for f in verb_forms(w, d):
            put(f, w)
    for w, d in words(ADJECTIVES):
        for f in adjective_forms(w, d):
            put(f, w)

    # Closure: a lemma must map to itself, so drop chained entries whose
    # target is itself a mapped surface.
    for surface in sorted(pairs):
        lemma = pairs[surface]
        while lemma in pairs:
            lemma = pairs[lemma]
        pairs[surface] = lemma

    for surface in sorted(pairs):
        sys.stdout.write(f"{surface}\t{pairs[surface]}\n")


if __name__ == "__main__":
    main()

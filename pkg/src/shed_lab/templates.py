"""Bundled prompt-template bank for additional style centroids.

58 style-worded prompt patterns covering common rendering styles; the
style word of each template doubles as a domain name in the synthetic
benchmarks. The generic prompt is kept separate because variants that
center on a single plain prompt need it addressable on its own.
"""

PLAIN_TEMPLATE = "a photo of a {}"

ADDITIONAL_STYLE_TEMPLATES: tuple[str, ...] = (
    "a drawing photo of a {}",
    "a watercolor photo of a {}",
    "a oil photo of a {}",
    "a graffiti photo of a {}",
    "a collage photo of a {}",
    "a vector photo of a {}",
    "a pixel photo of a {}",
    "a minimalist photo of a {}",
    "a abstract photo of a {}",
    "a chart photo of a {}",
    "a diagram photo of a {}",
    "a blueprint photo of a {}",
    "a surreal photo of a {}",
    "a monochrome photo of a {}",
    "a doodle photo of a {}",
    "a clipart photo of a {}",
    "a infograph photo of a {}",
    "a painting photo of a {}",
    "a quickdraw photo of a {}",
    "a real photo of a {}",
    "a sketch photo of a {}",
    "a art photo of a {}",
    "a product photo of a {}",
    "a real world photo of a {}",
    "a cartoon photo of a {}",
    "a art painting photo of a {}",
    "a white photo of a {}",
    "a impressionist photo of a {}",
    "a photorealistic photo of a {}",
    "a vintage photo of a {}",
    "a modern photo of a {}",
    "a neon photo of a {}",
    "a 3D photo of a {}",
    "a pop art photo of a {}",
    "a glitch photo of a {}",
    "a isometric photo of a {}",
    "a digital photo of a {}",
    "an anime photo of a {}",
    "a manga photo of a {}",
    "a concept art photo of a {}",
    "a futuristic photo of a {}",
    "a cinematic photo of a {}",
    "an abstract expressionism photo of a {}",
    "an action painting photo of a {}",
    "an art deco photo of a {}",
    "an art nouveau photo of a {}",
    "a baroque photo of a {}",
    "a bauhaus photo of a {}",
    "a cubism photo of a {}",
    "an expressionism photo of a {}",
    "a fauvism photo of a {}",
    "an impressionism photo of a {}",
    "a minimalism photo of a {}",
    "a op art photo of a {}",
    "a pointillism photo of a {}",
    "a realism photo of a {}",
    "a rococo photo of a {}",
    "a surrealism photo of a {}",
)


def style_word(template: str) -> str:
    """Extract the style word: the text between the leading article and
    'photo of'."""
    head = template.split(" photo of", 1)[0]
    for article in ("a ", "an "):
        if head.startswith(article):
            return head[len(article):]
    return head


def source_template_for(domain_name: str) -> str:
    """Source-domain prompt pattern matching the bundled style wording."""
    article = "an" if domain_name[:1].lower() in "aeiou" else "a"
    return f"{article} {domain_name} photo of a {{}}"

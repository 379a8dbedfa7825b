"""Abstract item-attribute world models: learn success probabilities of object changes and plan over them."""

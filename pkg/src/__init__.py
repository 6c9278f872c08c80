# etrl — src package root
